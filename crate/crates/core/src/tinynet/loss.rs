use serde::{Deserialize, Serialize};

use super::network::Real;
use crate::error::{invalid, Result};

/// Probabilities are clamped to this before taking logs.
const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

impl std::str::FromStr for LossKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Self::Mse),
            "cross_entropy" | "ce" => Ok(Self::CrossEntropy),
            _ => Err(invalid(format!("unknown loss '{s}' (mse | cross_entropy)"))),
        }
    }
}

fn check(pred_len: usize, target_len: usize) -> Result<()> {
    if pred_len != target_len || pred_len == 0 {
        return Err(invalid(format!("prediction has {pred_len} values, target {target_len}")));
    }
    Ok(())
}

pub fn loss<T: Real>(pred: &[T], target: &[T], kind: LossKind) -> Result<f64> {
    check(pred.len(), target.len())?;
    let pairs = pred.iter().zip(target).map(|(p, t)| (p.to_f64().unwrap(), t.to_f64().unwrap()));
    Ok(match kind {
        LossKind::Mse => pairs.map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64,
        LossKind::CrossEntropy => -pairs.map(|(p, t)| t * p.max(LOG_FLOOR).ln()).sum::<f64>(),
    })
}

/// dLoss/dPred.
pub fn loss_grad<T: Real>(pred: &[T], target: &[T], kind: LossKind) -> Result<Vec<T>> {
    check(pred.len(), target.len())?;
    let k = T::from(pred.len()).unwrap();
    let two = T::one() + T::one();
    let floor = T::from(LOG_FLOOR).unwrap();
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| match kind {
            LossKind::Mse => two * (p - t) / k,
            LossKind::CrossEntropy => -t / p.max(floor),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        assert_eq!(loss(&[0.3f64, 0.7], &[0.3, 0.7], LossKind::Mse).unwrap(), 0.0);
        let l = loss(&[1.0f64, 0.0, 0.0], &[0.0, 1.0, 0.0], LossKind::Mse).unwrap();
        assert!((l - 2.0 / 3.0).abs() < 1e-15);
        let ce = loss(&[0.25f64, 0.75], &[0.0, 1.0], LossKind::CrossEntropy).unwrap();
        assert!((ce + 0.75f64.ln()).abs() < 1e-15);
        assert!(loss(&[1.0f64], &[1.0, 2.0], LossKind::Mse).is_err());
    }

    #[test]
    fn grad_matches_central_difference() {
        let p = [0.2f64, 0.5, 0.3];
        let t = [0.0, 1.0, 0.0];
        for kind in [LossKind::Mse, LossKind::CrossEntropy] {
            let g = loss_grad(&p, &t, kind).unwrap();
            for i in 0..3 {
                let (mut a, mut b) = (p, p);
                a[i] += 1e-6;
                b[i] -= 1e-6;
                let fd = (loss(&a, &t, kind).unwrap() - loss(&b, &t, kind).unwrap()) / 2e-6;
                assert!((fd - g[i]).abs() < 1e-6, "{kind:?} {i}: {fd} vs {}", g[i]);
            }
        }
    }
}
