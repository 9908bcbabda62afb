//! Finite-difference gradient oracle.
//!
//! `grad_check` compares analytic gradients (one backward pass) against
//! central differences `(f(p+h) - f(p-h)) / 2h` for every element of every
//! parameter, rebuilding the graph for each probe. The graph builder must be
//! deterministic: training-mode dropout is rejected.

use crate::params::{Bindings, ParamStore};

use super::{Graph, NodeId, Real, Result, TensorError};

/// Relative error uses `|a - n| / max(|a|, |n|, REL_FLOOR)`; below the floor
/// the comparison degrades to an absolute one so that near-zero gradients
/// don't amplify finite-difference noise into spurious failures.
pub const REL_FLOOR: Real = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: Real,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    pub tol: Real,
    pub pass: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max rel err {:.3e} at {}[{}] over {} elements (tol {:.1e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.max_rel_err,
            self.worst_param,
            self.worst_index,
            self.checked,
            self.tol
        )
    }
}

/// Check every parameter element of `store` against central differences of
/// the scalar loss produced by `build`.
pub fn grad_check<F>(store: &mut ParamStore, h: Real, tol: Real, mut build: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Graph) -> Result<(NodeId, Bindings)>,
{
    assert!(h > 0.0, "step size must be positive");

    let mut g = Graph::new();
    let (loss, binds) = build(store, &mut g)?;
    if g.is_stochastic() {
        return Err(TensorError::StochasticGraph);
    }
    let f0 = g.value(loss).item();
    if !f0.is_finite() {
        return Err(TensorError::NonFinite { context: "grad_check: loss".into() });
    }
    g.backward(loss)?;

    let analytic: Vec<(String, Vec<Real>)> = binds
        .iter()
        .map(|(name, id)| {
            let grad = g.grad(id).map(|s| s.to_vec()).unwrap_or_else(|| {
                vec![0.0; g.value(id).len()]
            });
            (name.to_string(), grad)
        })
        .collect();
    drop(g);

    let mut eval = |store: &ParamStore| -> Result<Real> {
        let mut g = Graph::new();
        let (loss, _) = build(store, &mut g)?;
        let v = g.value(loss).item();
        if !v.is_finite() {
            return Err(TensorError::NonFinite { context: "grad_check: perturbed loss".into() });
        }
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        tol,
        pass: true,
    };

    for (name, grads) in &analytic {
        for idx in 0..grads.len() {
            let orig = store.get(name).value.data()[idx];
            store.get_mut(name).value.data_mut()[idx] = orig + h;
            let f_plus = eval(store)?;
            store.get_mut(name).value.data_mut()[idx] = orig - h;
            let f_minus = eval(store)?;
            store.get_mut(name).value.data_mut()[idx] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = grads[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_index = idx;
            }
        }
    }
    report.pass = report.max_rel_err <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::xavier;
    use crate::rng::SeedRng;
    use crate::tensor::Tensor;

    #[test]
    fn closed_form_square() {
        // f(theta) = theta^2 at theta=3: analytic 6, numeric 6 +- 1e-6
        let mut store = ParamStore::new();
        store.insert("theta", Tensor::scalar(3.0));
        let report = grad_check(&mut store, 1e-5, 1e-6, |s, g| {
            let binds = s.bind_all(g);
            let t = binds.get("theta");
            let sq = g.mul(t, t)?;
            Ok((g.sum(sq), binds))
        })
        .unwrap();
        assert!(report.pass, "{report}");
    }

    #[test]
    fn matmul_grads_within_1e6() {
        let root = SeedRng::new(11);
        let mut store = ParamStore::new();
        store.insert("a", xavier(3, 4, &mut root.split("a")));
        store.insert("b", xavier(4, 2, &mut root.split("b")));
        let report = grad_check(&mut store, 1e-5, 1e-6, |s, g| {
            let binds = s.bind_all(g);
            let prod = g.matmul(binds.get("a"), binds.get("b"))?;
            // square so each element's gradient is input-dependent
            let sq = g.mul(prod, prod)?;
            Ok((g.sum(sq), binds))
        })
        .unwrap();
        assert!(report.pass, "{report}");
    }

    #[test]
    fn layer_norm_grads_within_1e5() {
        let root = SeedRng::new(5);
        let mut store = ParamStore::new();
        store.insert("x", xavier(1, 8, &mut root.split("x")));
        store.insert("gain", xavier(1, 8, &mut root.split("g")));
        store.insert("bias", xavier(1, 8, &mut root.split("b")));
        let report = grad_check(&mut store, 1e-5, 1e-5, |s, g| {
            let binds = s.bind_all(g);
            let y = g.layer_norm(binds.get("x"), binds.get("gain"), binds.get("bias"), 1e-5)?;
            let sq = g.mul(y, y)?;
            Ok((g.sum(sq), binds))
        })
        .unwrap();
        assert!(report.pass, "{report}");
    }

    #[test]
    fn softmax_cross_entropy_grads() {
        let root = SeedRng::new(42);
        let mut store = ParamStore::new();
        store.insert("z", xavier(1, 5, &mut root.split("z")));
        let report = grad_check(&mut store, 1e-5, 1e-6, |s, g| {
            let binds = s.bind_all(g);
            let loss = g.cross_entropy(binds.get("z"), 2)?;
            Ok((loss, binds))
        })
        .unwrap();
        assert!(report.pass, "{report}");
    }

    #[test]
    fn every_op_in_one_composite_graph() {
        // chains each differentiable op at least once; rel err <= 1e-4
        let root = SeedRng::new(99);
        let mut store = ParamStore::new();
        store.insert("x", xavier(4, 6, &mut root.split("x")));
        store.insert("w", xavier(6, 4, &mut root.split("w")));
        store.insert("bias", xavier(1, 4, &mut root.split("bias")));
        store.insert("gain", xavier(1, 4, &mut root.split("gain")));
        store.insert("scale", Tensor::scalar(0.7));
        let report = grad_check(&mut store, 1e-5, 1e-4, |s, g| {
            let binds = s.bind_all(g);
            let x = binds.get("x");
            let w = binds.get("w");
            let prod = g.matmul(x, w)?; // [4x4]
            let prod = g.add_bias(prod, binds.get("bias"))?;
            let t = g.transpose(prod)?;
            let t = g.transpose(t)?;
            let soft = g.softmax(t, 1)?;
            let ln = g.layer_norm(prod, binds.get("gain"), binds.get("bias"), 1e-5)?;
            let mix = g.add(soft, ln)?;
            let mix = g.tanh(mix);
            let act = g.relu(prod);
            let sig = g.sigmoid(prod);
            let had = g.mul(act, sig)?;
            let both = g.concat(&[mix, had], 0)?; // [8x4]
            let sliced = g.slice_cols(both, 1, 3)?;
            let gathered = g.gather_rows(both, &[0, 3, 3, 7])?;
            let pooled = g.max_pool_rows(both, 2)?; // [4x4]
            let scaled = g.scale_by(pooled, binds.get("scale"))?;
            let shifted = g.affine(scaled, -0.5, 0.3);
            let ce = g.cross_entropy_rows(gathered, &[0, 2, 1, 3], &[true, true, false, true], Some(&[1.5, 1.0, 1.0, 0.5]))?;
            let s1 = g.sum(sliced);
            let s2 = g.sum(shifted);
            let partial = g.add(s1, s2)?;
            Ok((g.add(partial, ce)?, binds))
        })
        .unwrap();
        assert!(report.pass, "{report}");
    }

    #[test]
    fn training_dropout_rejected() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::row(vec![1.0, 2.0]));
        let mut rng = SeedRng::new(0).split("drop");
        let err = grad_check(&mut store, 1e-5, 1e-4, |s, g| {
            let binds = s.bind_all(g);
            let d = g.dropout(binds.get("x"), 0.5, true, &mut rng)?;
            Ok((g.sum(d), binds))
        })
        .unwrap_err();
        assert!(matches!(err, TensorError::StochasticGraph));
    }
}
