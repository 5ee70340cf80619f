use crate::error::{Error, Result};
use crate::model::Param;
use crate::numerics::Scalar;

/// First and second moment buffers of one trainable array.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub name: String,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Adam state. Frozen arrays get no entry at all.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub moments: Vec<Moments<T>>,
    pub step: u64,
    pub tokens_seen: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Param<T>>) -> Self {
        let moments = params
            .into_iter()
            .filter(|p| p.trainable())
            .map(|p| Moments {
                name: p.name.clone(),
                m: vec![T::zero(); p.len()],
                v: vec![T::zero(); p.len()],
            })
            .collect();
        OptimState {
            moments,
            step: 0,
            tokens_seen: 0,
        }
    }

    /// Number of scalars held across all moment buffers.
    pub fn len(&self) -> usize {
        self.moments.iter().map(|m| m.m.len() + m.v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

/// Bias-corrected Adam over the trainable members of `params`, in order.
/// Weight decay enters as an L2 term added to the gradient.
pub fn adam_step<T: Scalar>(params: &mut [&mut Param<T>], state: &mut OptimState<T>, hp: AdamParams) -> Result<()> {
    let trainable = params.iter().filter(|p| p.trainable()).count();
    if trainable != state.moments.len() {
        return Err(Error::shape(format!(
            "{trainable} trainable arrays but optimizer state for {}",
            state.moments.len()
        )));
    }
    for (p, mo) in params.iter().filter(|p| p.trainable()).zip(&state.moments) {
        if p.name != mo.name || p.len() != mo.m.len() {
            return Err(Error::shape(format!(
                "optimizer state {} ({}) does not match parameter {} ({})",
                mo.name,
                mo.m.len(),
                p.name,
                p.len()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = hp.betas;
    let c = T::from_f64_lossy;
    let (b1t, b2t) = (c(b1), c(b2));
    let (one_m_b1, one_m_b2) = (c(1.0 - b1), c(1.0 - b2));
    let inv_bc1 = c(1.0 / (1.0 - b1.powi(t)));
    let inv_bc2 = c(1.0 / (1.0 - b2.powi(t)));
    let (lr, eps, wd) = (c(hp.lr), c(hp.eps), c(hp.weight_decay));
    let decay = hp.weight_decay != 0.0;
    for (p, mo) in params.iter_mut().filter(|p| p.trainable()).zip(&mut state.moments) {
        let grad = p.grad.as_ref().expect("trainable").data();
        let value = p.value.data_mut();
        for (((w, &g), m), v) in value.iter_mut().zip(grad).zip(&mut mo.m).zip(&mut mo.v) {
            let g = if decay { g + wd * *w } else { g };
            *m = b1t * *m + one_m_b1 * g;
            *v = b2t * *v + one_m_b2 * g * g;
            let mhat = *m * inv_bc1;
            let vhat = *v * inv_bc2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Global L2 norm of all gradients, accumulated in f64 in order.
pub fn global_norm<T: Scalar>(grads: &[&[T]]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&v| {
            let v = v.as_f64();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm does not exceed `max_norm`;
/// returns the norm before clipping. The scale carries a few ulps of
/// headroom so rounding can never push the result above the limit.
pub fn clip_global_norm<T: Scalar>(grads: &mut [&mut [T]], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::invalid("clip norm must be positive"));
    }
    let norm = {
        let views: Vec<&[T]> = grads.iter().map(|g| &**g).collect();
        global_norm(&views)
    };
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient norm is {norm}")));
    }
    if norm > max_norm {
        let headroom = 1.0 - 4.0 * T::epsilon().as_f64();
        let scale = T::from_f64_lossy(max_norm / norm * headroom);
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar(v: f64, g: f64) -> Param<f64> {
        let mut p = Param::new("p", Tensor::new(&[1], vec![v]).unwrap(), true);
        p.grad = Some(Tensor::new(&[1], vec![g]).unwrap());
        p
    }

    const HP: AdamParams = AdamParams {
        lr: 0.1,
        betas: (0.9, 0.999),
        eps: 1e-8,
        weight_decay: 0.0,
    };

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.5, 1.0);
        let mut st = OptimState::new([&p]);
        adam_step(&mut [&mut p], &mut st, HP).unwrap();
        assert!((p.data()[0] - 0.4).abs() < 1e-8);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = scalar(0.5, 0.0);
        let mut st = OptimState::new([&p]);
        for _ in 0..3 {
            adam_step(&mut [&mut p], &mut st, HP).unwrap();
        }
        assert_eq!(p.data()[0], 0.5);
    }

    #[test]
    fn frozen_arrays_have_no_state_and_do_not_move() {
        let mut t = scalar(1.0, 1.0);
        let mut f = Param::new("f", Tensor::new(&[2], vec![3.0, 4.0]).unwrap(), false);
        let mut st = OptimState::new([&t, &f]);
        assert_eq!(st.moments.len(), 1);
        assert_eq!(st.len(), 2);
        adam_step(&mut [&mut t, &mut f], &mut st, HP).unwrap();
        assert_eq!(f.data(), &[3.0, 4.0]);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut a = scalar(1.0, 1.0);
        let b = Param::new("b", Tensor::new(&[3], vec![0.0; 3]).unwrap(), true);
        let mut st = OptimState::new([&b]);
        assert!(adam_step(&mut [&mut a], &mut st, HP).is_err());
    }

    #[test]
    fn clipping_examples() {
        let mut g = [3.0f64, 4.0];
        let n = clip_global_norm(&mut [&mut g[..]], 1.0).unwrap();
        assert_eq!(n, 5.0);
        assert!((g[0] - 0.6).abs() < 1e-14 && (g[1] - 0.8).abs() < 1e-14);
        let mut g = vec![0.3f64, 0.4];
        clip_global_norm(&mut [&mut g[..]], 1.0).unwrap();
        assert_eq!(g, vec![0.3, 0.4]);
        let mut g = [f64::NAN];
        assert!(matches!(
            clip_global_norm(&mut [&mut g[..]], 1.0),
            Err(Error::NonFinite(_))
        ));
    }
}
