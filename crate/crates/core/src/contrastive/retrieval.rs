use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    pub queries: usize,
    pub k: usize,
    /// Mean fraud share among each fraud query's `k` nearest neighbours.
    pub precision: f64,
    /// Fraud share a random neighbour would have, `(P-1)/(N-1)`.
    pub base_rate: f64,
    pub lift: f64,
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::ZeroNorm { row: 0 });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine nearest-neighbour retrieval with every fraud sequence as a query
/// against all other sequences. Neighbour ties resolve to the lower index.
pub fn fraud_retrieval(
    embeddings: &[Vec<f64>],
    is_fraud: &[bool],
    k: usize,
) -> Result<RetrievalReport> {
    let n = embeddings.len();
    if is_fraud.len() != n {
        return Err(Error::Validation(format!(
            "{n} embeddings but {} labels",
            is_fraud.len()
        )));
    }
    let p = is_fraud.iter().filter(|&&f| f).count();
    if p < 2 || k == 0 || k >= n {
        return Err(Error::Undefined(format!(
            "retrieval needs >= 2 fraud sequences and 0 < k < N (P={p}, k={k}, N={n})"
        )));
    }
    let units: Vec<Vec<f64>> = embeddings.iter().map(|e| unit(e)).collect::<Result<_>>()?;
    let mut hits = 0.0;
    for q in (0..n).filter(|&i| is_fraud[i]) {
        let mut sims: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != q)
            .map(|j| (units[q].iter().zip(&units[j]).map(|(a, b)| a * b).sum(), j))
            .collect();
        sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        hits += sims[..k].iter().filter(|(_, j)| is_fraud[*j]).count() as f64 / k as f64;
    }
    let precision = hits / p as f64;
    let base_rate = (p - 1) as f64 / (n - 1) as f64;
    Ok(RetrievalReport {
        queries: p,
        k,
        precision,
        base_rate,
        lift: precision / base_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_clusters_are_perfect() {
        let mut e = Vec::new();
        let mut f = Vec::new();
        for i in 0..40 {
            let fraud = i < 5;
            e.push(if fraud {
                vec![1.0, 0.01 * i as f64]
            } else {
                vec![-0.01 * i as f64, 1.0]
            });
            f.push(fraud);
        }
        let r = fraud_retrieval(&e, &f, 4).unwrap();
        assert_eq!(r.precision, 1.0);
        assert!((r.base_rate - 4.0 / 39.0).abs() < 1e-12);
        assert!((r.lift - 39.0 / 4.0).abs() < 1e-9);
    }

    #[test]
    fn identical_embeddings_give_index_order() {
        let e = vec![vec![1.0, 1.0]; 6];
        let f = vec![false, true, false, false, false, true];
        // Query 1 sees neighbours 0,2; query 5 sees 0,1.
        let r = fraud_retrieval(&e, &f, 2).unwrap();
        assert!((r.precision - 0.25).abs() < 1e-12);
    }

    #[test]
    fn undefined_cases() {
        let e = vec![vec![1.0]; 3];
        assert!(fraud_retrieval(&e, &[true, false, false], 1).is_err());
        assert!(fraud_retrieval(&e, &[true, true, false], 3).is_err());
    }
}
