//! GRU recurrence as a single custom op with a hand-written backward pass.
//!
//! Inputs are the precomputed input projections `gi (B, T, 3H)`, the
//! recurrent weight `w (H, 3H)` and bias `b (3H)`; the output holds the
//! hidden state of every step followed by the saved gate activations,
//! `(B, T, 5H)`. Gate order is reset, update, new.
//! Arithmetic runs in the input dtype (f32 or f64).

use candle_core::{CpuStorage, CustomOp3, Layout, Shape, Tensor, WithDType};

use super::activation::{sigmoid, tanh, Real};

pub(super) struct GruRecurrence;

fn slice<'a, T: WithDType>(v: &'a [T], l: &Layout) -> candle_core::Result<&'a [T]> {
    let (start, end) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("gru recurrence expects contiguous inputs".into()))?;
    Ok(&v[start..end])
}

/// Row-major `dst (m, n) [+]= a (m, k) @ b (k, n)`, with `a` and `b` given by
/// their `(row, col)` strides.
#[allow(clippy::too_many_arguments)]
fn gemm_into<T: Real>(
    (m, n, k): (usize, usize, usize),
    dst: &mut [T],
    accumulate: bool,
    a: &[T],
    (a_rs, a_cs): (usize, usize),
    b: &[T],
    (b_rs, b_cs): (usize, usize),
) {
    assert!(dst.len() >= m * n);
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * a_rs + (k - 1) * a_cs);
    assert!(n == 0 || k == 0 || b.len() > (k - 1) * b_rs + (n - 1) * b_cs);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above keep every index inside the three slices,
    // and `dst` does not alias the inputs.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            1,
            n as isize,
            accumulate,
            a.as_ptr(),
            a_cs as isize,
            a_rs as isize,
            b.as_ptr(),
            b_cs as isize,
            b_rs as isize,
            T::one(),
            T::one(),
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}

/// `(B, T, C)` batch-major to `(T, B, C)` time-major, or back with `b`, `t` swapped.
fn swap_major<T: Copy + Default>(v: &[T], b: usize, t: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::default(); v.len()];
    for bi in 0..b {
        for ti in 0..t {
            out[(ti * b + bi) * c..(ti * b + bi + 1) * c].copy_from_slice(&v[(bi * t + ti) * c..(bi * t + ti + 1) * c]);
        }
    }
    out
}

/// Width of one output row: `h`, then the gate activations `r`, `z`, `n` and
/// the recurrent new-gate term `gh_n` kept for the backward pass.
pub(super) const TRACE_WIDTH: usize = 5;

/// Output rows, time-major `(T, B, 5H)`, from time-major `gi`.
fn forward<T: Real>(gi: &[T], w: &[T], bias: &[T], b: usize, t: usize, hd: usize) -> Vec<T> {
    let g3 = 3 * hd;
    let width = TRACE_WIDTH * hd;
    let mut out = vec![T::zero(); t * b * width];
    let mut h = vec![T::zero(); b * hd];
    let mut gh = vec![T::zero(); b * g3];
    for ti in 0..t {
        if ti > 0 {
            gemm_into((b, g3, hd), &mut gh, false, &h, (hd, 1), w, (g3, 1));
        }
        for bi in 0..b {
            let x = &gi[(ti * b + bi) * g3..(ti * b + bi + 1) * g3];
            let g = &gh[bi * g3..(bi + 1) * g3];
            let row = &mut out[(ti * b + bi) * width..(ti * b + bi + 1) * width];
            for j in 0..hd {
                let r = sigmoid(x[j] + g[j] + bias[j]);
                let z = sigmoid(x[hd + j] + g[hd + j] + bias[hd + j]);
                let gh_n = g[2 * hd + j] + bias[2 * hd + j];
                let n = tanh(x[2 * hd + j] + r * gh_n);
                let hp = h[bi * hd + j];
                let hn = n + z * (hp - n);
                h[bi * hd + j] = hn;
                row[j] = hn;
                row[hd + j] = r;
                row[2 * hd + j] = z;
                row[3 * hd + j] = n;
                row[4 * hd + j] = gh_n;
            }
        }
    }
    out
}

/// Gradients with respect to `gi` (time-major), `w` and `bias`, from the
/// forward rows `trace` and the hidden-state gradient `dout`, both time-major.
fn backward<T: Real>(w: &[T], trace: &[T], dout: &[T], b: usize, t: usize, hd: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let g3 = 3 * hd;
    let width = TRACE_WIDTH * hd;
    let prev_rows = t.saturating_sub(1) * b;
    // dgh equals dgi except in the new-gate block, where it carries the reset factor
    let mut dgi = vec![T::zero(); t * b * g3];
    let mut dgh = vec![T::zero(); t * b * g3];
    let mut dh = vec![T::zero(); b * hd];
    let one = T::one();
    for ti in (0..t).rev() {
        for bi in 0..b {
            let k = ti * b + bi;
            let row = &trace[k * width..(k + 1) * width];
            let g = k * g3;
            for j in 0..hd {
                let (r, z, n, gh_n) = (row[hd + j], row[2 * hd + j], row[3 * hd + j], row[4 * hd + j]);
                let d = dh[bi * hd + j] + dout[k * hd + j];
                let hp = if ti > 0 { trace[(k - b) * width + j] } else { T::zero() };
                let dn = d * (one - z);
                let dz = d * (hp - n);
                dh[bi * hd + j] = d * z;
                let dan = dn * (one - n * n);
                let dar = dan * gh_n * r * (one - r);
                let daz = dz * z * (one - z);
                dgi[g + j] = dar;
                dgi[g + hd + j] = daz;
                dgi[g + 2 * hd + j] = dan;
                dgh[g + j] = dar;
                dgh[g + hd + j] = daz;
                dgh[g + 2 * hd + j] = dan * r;
            }
        }
        if ti > 0 {
            // dh += dgh_t @ w^T
            gemm_into((b, hd, g3), &mut dh, true, &dgh[ti * b * g3..(ti + 1) * b * g3], (g3, 1), w, (1, g3));
        }
    }
    let mut db = vec![T::zero(); g3];
    for row in dgh.chunks(g3) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc = *acc + g;
        }
    }
    // dW = sum over steps t >= 1 of h_{t-1}^T dgh_t; h_{t-1} rows sit at stride `width`
    let mut dw = vec![T::zero(); hd * g3];
    gemm_into((hd, g3, prev_rows), &mut dw, false, trace, (1, width), &dgh[b * g3..], (g3, 1));
    (dgi, dw, db)
}

fn check_shapes(gi: &Shape, w: &Shape, b: &Shape) -> candle_core::Result<(usize, usize, usize)> {
    let (bs, t, g3) = gi.dims3()?;
    let hd = g3 / 3;
    if g3 % 3 != 0 || w.dims() != [hd, g3] || b.dims() != [g3] {
        return Err(candle_core::Error::Msg("gru recurrence: weight shapes do not match inputs".into()));
    }
    Ok((bs, t, hd))
}

fn fwd_typed<T: Real>(gi: &[T], w: &[T], bias: &[T], b: usize, t: usize, hd: usize) -> Vec<T> {
    let out = forward(&swap_major(gi, b, t, 3 * hd), w, bias, b, t, hd);
    swap_major(&out, t, b, TRACE_WIDTH * hd)
}

fn bwd_typed<T: Real>(w: &Tensor, trace: &Tensor, grad: &Tensor, b: usize, t: usize, hd: usize) -> candle_core::Result<(Tensor, Tensor, Tensor)> {
    let v = |x: &Tensor| x.flatten_all()?.to_vec1::<T>();
    let trace_tm = swap_major(&v(trace)?, b, t, TRACE_WIDTH * hd);
    // only the hidden-state columns of the output are exposed
    let dout_tm = swap_major(&v(&grad.narrow(2, 0, hd)?.contiguous()?)?, b, t, hd);
    let (dgi, dw, db) = backward(&v(w)?, &trace_tm, &dout_tm, b, t, hd);
    let dev = w.device();
    Ok((
        Tensor::from_vec(swap_major(&dgi, t, b, 3 * hd), (b, t, 3 * hd), dev)?,
        Tensor::from_vec(dw, (hd, 3 * hd), dev)?,
        Tensor::from_vec(db, 3 * hd, dev)?,
    ))
}

impl CustomOp3 for GruRecurrence {
    fn name(&self) -> &'static str {
        "gru-recurrence"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (b, t, hd) = check_shapes(l1.shape(), l2.shape(), l3.shape())?;
        let out = match (s1, s2, s3) {
            (CpuStorage::F32(gi), CpuStorage::F32(w), CpuStorage::F32(bias)) => {
                CpuStorage::F32(fwd_typed(slice(gi, l1)?, slice(w, l2)?, slice(bias, l3)?, b, t, hd))
            }
            (CpuStorage::F64(gi), CpuStorage::F64(w), CpuStorage::F64(bias)) => {
                CpuStorage::F64(fwd_typed(slice(gi, l1)?, slice(w, l2)?, slice(bias, l3)?, b, t, hd))
            }
            _ => return Err(candle_core::Error::Msg("gru recurrence needs f32 or f64 inputs of one dtype".into())),
        };
        Ok((out, Shape::from((b, t, TRACE_WIDTH * hd))))
    }

    fn bwd(
        &self,
        gi: &Tensor,
        w: &Tensor,
        bias: &Tensor,
        res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let (b, t, hd) = check_shapes(gi.shape(), w.shape(), bias.shape())?;
        let dt = gi.dtype();
        let grad = grad.to_dtype(dt)?;
        let (dgi, dw, db) = match dt {
            candle_core::DType::F32 => bwd_typed::<f32>(w, res, &grad, b, t, hd)?,
            candle_core::DType::F64 => bwd_typed::<f64>(w, res, &grad, b, t, hd)?,
            other => return Err(candle_core::Error::Msg(format!("gru recurrence does not support {other:?}"))),
        };
        Ok((Some(dgi), Some(dw), Some(db)))
    }
}
