//! Scalar activations shared by the custom CPU ops, and a fused sigmoid op.

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor, WithDType};
use num_traits::Float;

pub(super) trait Real: WithDType + Float + Default {}
impl Real for f32 {}
impl Real for f64 {}

pub(super) fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub(super) fn tanh<T: Real>(v: T) -> T {
    let e = (-(v.abs() + v.abs())).exp();
    ((T::one() - e) / (T::one() + e)).copysign(v)
}

/// Elementwise logistic function; the backward pass reuses the output.
pub(super) struct SigmoidOp;

fn map<T: Real>(v: &[T], l: &Layout) -> candle_core::Result<Vec<T>> {
    let (a, b) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("sigmoid expects a contiguous input".into()))?;
    Ok(v[a..b].iter().map(|&x| sigmoid(x)).collect())
}

impl CustomOp1 for SigmoidOp {
    fn name(&self) -> &'static str {
        "fast-sigmoid"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(map(v, l)?),
            CpuStorage::F64(v) => CpuStorage::F64(map(v, l)?),
            _ => return Err(candle_core::Error::Msg("sigmoid supports f32 and f64".into())),
        };
        Ok((out, l.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let slope = (res * (1.0 - res)?)?;
        Ok(Some(grad.mul(&slope)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_forms_match_libm() {
        for i in -400..=400 {
            let x = i as f64 * 0.05;
            assert!((tanh(x) - x.tanh()).abs() < 1e-15, "{x}");
            assert!((sigmoid(x) - 0.5 * (1.0 + (0.5 * x).tanh())).abs() < 1e-15, "{x}");
            assert!((tanh(x as f32) - (x as f32).tanh()).abs() < 1e-6);
        }
        assert_eq!(tanh(80.0f32), 1.0);
        assert_eq!(sigmoid(-200.0f32), 0.0);
        assert_eq!(tanh(0.0f64), 0.0);
    }

    #[test]
    fn sigmoid_op_matches_graph_formula_and_gradient() {
        let dev = candle_core::Device::Cpu;
        let x = candle_core::Var::new(&[[-3.0f64, -0.2, 0.0], [0.7, 2.5, 9.0]], &dev).unwrap();
        let xt = x.as_tensor().t().unwrap();
        let fast = crate::nn::sigmoid(&xt).unwrap();
        let slow = ((((&xt * 0.5).unwrap().tanh().unwrap() + 1.0).unwrap()) * 0.5).unwrap();
        let diff = (&fast - &slow).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-15);
        let w = Tensor::new(&[[1.0f64, -2.0], [0.5, 3.0], [4.0, 1.5]], &dev).unwrap();
        let g_fast = (fast * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let g_slow = (slow * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let (a, b) = (g_fast.get(&x).unwrap(), g_slow.get(&x).unwrap());
        let diff = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-15);
    }
}
