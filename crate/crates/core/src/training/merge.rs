use crate::encoder::{Checkpoint, Params};
use crate::tensor::Tensor;
use crate::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Elementwise convex combination `Σ_k w_k θ_k` of checkpoints that share one
/// parameter layout. Header metadata comes from the first checkpoint.
///
/// Each element sums its nonzero-weight products in ascending order, so the
/// result does not depend on the order of `inputs`, and a weight vector with
/// a single 1 reproduces that checkpoint exactly.
pub fn merge_models(inputs: &[(Checkpoint, f64)]) -> Result<Checkpoint> {
    let (first, _) = inputs.first().ok_or_else(|| Error::Merge("nothing to merge".into()))?;
    for (i, (_, w)) in inputs.iter().enumerate() {
        if !(*w >= 0.0 && w.is_finite()) {
            return Err(Error::Merge(format!(
                "weight {i} is {w}; weights must be finite and nonnegative"
            )));
        }
    }
    let total: f64 = inputs.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::Merge(format!("weights sum to {total}, expected 1")));
    }
    let mut bad = Vec::new();
    for (i, (c, _)) in inputs.iter().enumerate().skip(1) {
        bad.extend(
            first
                .params
                .layout_mismatches(&c.params)
                .into_iter()
                .map(|m| format!("checkpoint {i}: {m}")),
        );
    }
    if !bad.is_empty() {
        return Err(Error::Merge(format!("parameter layouts differ: {}", bad.join(", "))));
    }

    let live: Vec<(&Params, f64)> = inputs
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(c, w)| (&c.params, *w))
        .collect();
    let mut params = Params::new();
    let mut terms = Vec::with_capacity(live.len());
    for (name, t) in first.params.iter() {
        let sources: Vec<(&[f64], f64)> = live
            .iter()
            .map(|(p, w)| (p.get(name).expect("layout checked").data(), *w))
            .collect();
        let data = (0..t.len())
            .map(|e| {
                terms.clear();
                terms.extend(sources.iter().map(|(d, w)| w * d[e]));
                terms.sort_by(f64::total_cmp);
                let mut acc = terms[0];
                for x in &terms[1..] {
                    acc += x;
                }
                acc
            })
            .collect();
        params.insert(name.clone(), Tensor::new(t.shape().to_vec(), data)?);
    }
    Ok(Checkpoint {
        meta: first.meta.clone(),
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt(vals: &[f64]) -> Checkpoint {
        let mut params = Params::new();
        params.insert("a", Tensor::vector(vals.to_vec()));
        params.insert("b", Tensor::scalar(vals[0] * 3.0));
        Checkpoint {
            meta: vec![("k".into(), "v".into())],
            params,
        }
    }

    #[test]
    fn averages_elementwise() {
        let m = merge_models(&[(ckpt(&[2.0, 1.0]), 0.5), (ckpt(&[4.0, 3.0]), 0.5)]).unwrap();
        assert_eq!(m.params.get("a").unwrap().data(), &[3.0, 2.0]);
        assert_eq!(m.params.get("b").unwrap().item(), 9.0);
        assert_eq!(m.meta, vec![("k".to_string(), "v".to_string())]);
    }

    #[test]
    fn identity_weights_are_exact() {
        let a = ckpt(&[0.1, -7.3e-5]);
        let m = merge_models(&[(a.clone(), 1.0), (ckpt(&[9.0, 9.0]), 0.0)]).unwrap();
        assert_eq!(m.to_bytes(), a.to_bytes());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(merge_models(&[]).is_err());
        assert!(merge_models(&[(ckpt(&[1.0]), 0.7), (ckpt(&[1.0]), 0.7)]).is_err());
        assert!(merge_models(&[(ckpt(&[1.0]), 1.5), (ckpt(&[1.0]), -0.5)]).is_err());
        let err = merge_models(&[(ckpt(&[1.0]), 0.5), (ckpt(&[1.0, 2.0]), 0.5)]).unwrap_err();
        assert!(err.to_string().contains('a'), "{err}");
        let mut other = ckpt(&[1.0]);
        other.params.insert("extra", Tensor::scalar(0.0));
        let err = merge_models(&[(ckpt(&[1.0]), 0.5), (other, 0.5)]).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }
}
