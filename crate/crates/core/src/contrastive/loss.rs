use crate::error::{Error, Result};
use crate::numerics::{Graph, Scalar, Var};

/// `out[i,j] = cos(A_i, B_j)`.
pub fn cosine_matrix<S: Scalar>(g: &mut Graph<S>, a: Var, b: Var) -> Result<Var> {
    let an = g.normalize_rows(a)?;
    let bn = g.normalize_rows(b)?;
    g.matmul_nt(an, bn)
}

/// Mean InfoNCE over the batch with `sim = cos/τ`. Row `i` scores its
/// positive `v⁺_i` against the other first views `v_j`, `j ≠ i`.
pub fn infonce_loss<S: Scalar>(g: &mut Graph<S>, v: Var, v_pos: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!(
            "temperature must be > 0, got {tau}"
        )));
    }
    let n = g.shape(v)[0];
    if g.shape(v) != g.shape(v_pos) {
        return Err(Error::dim("infonce_loss", g.shape(v), g.shape(v_pos)));
    }
    if n < 2 {
        return Err(Error::Parameter(format!("infonce needs N >= 2, got {n}")));
    }
    let pos = cosine_matrix(g, v, v_pos)?;
    let neg = cosine_matrix(g, v, v)?;
    let diag: Vec<bool> = (0..n * n).map(|k| k / n == k % n).collect();
    let m = g.where_mask(pos, neg, &diag)?;
    let logits = g.scale(m, 1.0 / tau);
    let targets: Vec<usize> = (0..n).collect();
    g.softmax_ce(logits, &targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn loss_of(v: &[Vec<f64>], vp: &[Vec<f64>], tau: f64) -> f64 {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_rows(v).unwrap());
        let b = g.constant(Tensor::from_rows(vp).unwrap());
        let l = infonce_loss(&mut g, a, b, tau).unwrap();
        g.value(l).item()
    }

    #[test]
    fn orthonormal_cosine_is_identity() {
        let rows = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_rows(&rows).unwrap());
        let scaled: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|x| 2.0 * x).collect())
            .collect();
        let b = g.constant(Tensor::from_rows(&scaled).unwrap());
        let c = cosine_matrix(&mut g, a, b).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g.value(c).row(i)[j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_row_rejected() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        assert!(matches!(
            cosine_matrix(&mut g, a, a),
            Err(Error::ZeroNorm { row: 1 })
        ));
    }

    #[test]
    fn equal_similarities_give_ln_n() {
        // Every row equal: all cosines are 1.
        let v = vec![vec![0.3, -1.2, 2.0]; 4];
        let l = loss_of(&v, &v, 0.05);
        assert!((l - 4f64.ln()).abs() < 1e-9, "{l}");
    }

    #[test]
    fn perfect_alignment_bound() {
        let e: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        let l = loss_of(&e, &e, 0.05);
        // ln(1 + 3 e^-20)
        assert!((0.0..1e-6).contains(&l), "{l}");
        assert!((l - (3.0 * (-20f64).exp()).ln_1p()).abs() < 1e-15);
    }

    #[test]
    fn scale_and_permutation_invariance() {
        let v = vec![
            vec![0.3, -1.0, 0.5],
            vec![1.0, 0.2, 0.1],
            vec![-0.4, 0.8, 0.9],
        ];
        let vp = vec![
            vec![0.2, -0.8, 0.7],
            vec![0.9, 0.4, 0.0],
            vec![-0.1, 0.7, 1.1],
        ];
        let base = loss_of(&v, &vp, 0.1);
        let s = |m: &[Vec<f64>]| {
            m.iter()
                .map(|r| r.iter().map(|x| 3.5 * x).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        assert!((loss_of(&s(&v), &s(&vp), 0.1) - base).abs() < 1e-12);
        let p = [2, 0, 1];
        let pv: Vec<Vec<f64>> = p.iter().map(|&i| v[i].clone()).collect();
        let pvp: Vec<Vec<f64>> = p.iter().map(|&i| vp[i].clone()).collect();
        assert!((loss_of(&pv, &pvp, 0.1) - base).abs() < 1e-9);
    }

    #[test]
    fn bad_temperature_and_batch() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        assert!(matches!(
            infonce_loss(&mut g, a, a, 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(infonce_loss(&mut g, a, a, -1.0).is_err());
        let one = g.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        assert!(infonce_loss(&mut g, one, one, 0.05).is_err());
    }
}
