use super::{inversions, Permutation};
use crate::error::{PtcError, Result};
use crate::linalg::RMat;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Stochastic permutation legalization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplConfig {
    /// Perturbation std, relative to the largest entry of `|P Q^T|`.
    pub sigma: f64,
    /// Temperature of the first row softmax. `0` is the hard limit.
    pub tau: f64,
    pub max_attempts: usize,
    /// Extra crossings tolerated over the rank-ordered reference. `None`
    /// accepts the first legal draw.
    pub crossing_budget: Option<usize>,
}

impl Default for SplConfig {
    fn default() -> Self {
        Self { sigma: 0.1, tau: 0.0, max_attempts: 1000, crossing_budget: None }
    }
}

impl SplConfig {
    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || self.max_attempts == 0 || !(self.tau >= 0.0) {
            return Err(PtcError::Domain(format!("invalid SPL config {self:?}")));
        }
        Ok(())
    }
}

/// Row-wise argmax, lowest index wins ties.
pub fn row_argmax(m: &RMat) -> Vec<usize> {
    m.row_iter()
        .map(|r| {
            let mut best = 0;
            for j in 1..r.len() {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn one_hot(assign: &[usize], n: usize) -> RMat {
    let mut m = RMat::zeros(assign.len(), n);
    for (i, &j) in assign.iter().enumerate() {
        m[(i, j)] = 1.0;
    }
    m
}

fn softmax_rows(m: &RMat, tau: f64) -> RMat {
    let mut out = m.clone();
    for mut r in out.row_iter_mut() {
        let mx = r.max();
        r.apply(|x| *x = ((*x - mx) / tau).exp());
        let s = r.sum();
        r /= s;
    }
    out
}

fn legal(assign: &[usize]) -> bool {
    let mut seen = vec![false; assign.len()];
    assign.iter().all(|&j| j < seen.len() && !std::mem::replace(&mut seen[j], true))
}

/// Forces a relaxed matrix onto a legal permutation: binarize rows, take the
/// orthogonal polar factor of that binary matrix, then repeatedly perturb
/// its magnitude and re-binarize until the rows form a permutation.
pub fn spl_legalize<R: Rng + ?Sized>(p: &RMat, cfg: &SplConfig, rng: &mut R) -> Result<Permutation> {
    cfg.validate()?;
    if p.nrows() != p.ncols() {
        return Err(PtcError::Dimension { expected: p.nrows(), actual: p.ncols() });
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Err(PtcError::Domain("SPL input has non-finite entries".into()));
    }
    let k = p.nrows();
    let first = row_argmax(p);
    if legal(&first) {
        return Permutation::new(first);
    }
    let binarized = if cfg.tau > 0.0 { softmax_rows(p, cfg.tau) } else { one_hot(&first, k) };
    let svd = binarized.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(PtcError::Degenerate("SVD did not converge".into())),
    };
    let polar = (u * v_t).abs();
    let scale = polar.max().max(f64::MIN_POSITIVE);
    let noise = Normal::new(0.0, cfg.sigma * scale).map_err(|e| PtcError::Domain(format!("bad SPL noise: {e}")))?;
    let reference = inversions(Permutation::by_rank(&first).as_slice());

    let mut best: Option<(usize, Vec<usize>)> = None;
    for _ in 0..cfg.max_attempts {
        let perturbed = polar.map(|x| x + noise.sample(rng));
        let assign = row_argmax(&perturbed);
        if !legal(&assign) {
            continue;
        }
        let cr = inversions(&assign);
        match cfg.crossing_budget {
            None => return Permutation::new(assign),
            Some(budget) if cr <= reference + budget => return Permutation::new(assign),
            Some(_) => {
                if best.as_ref().is_none_or(|(c, _)| cr < *c) {
                    best = Some((cr, assign));
                }
            }
        }
    }
    match best {
        Some((_, assign)) => Permutation::new(assign),
        None => Err(PtcError::Legalization { attempts: cfg.max_attempts, best_effort: first }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perm::is_permutation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn legal_input_is_returned_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Permutation::new(vec![2, 0, 3, 1]).unwrap();
        let mut soft = p.to_matrix() * 0.8;
        soft.add_scalar_mut(0.05);
        let got = spl_legalize(&soft, &SplConfig::default(), &mut rng).unwrap();
        assert_eq!(got, p);
    }

    #[test]
    fn saddle_resolves_to_both_permutations() {
        let saddle = RMat::from_element(2, 2, 0.5);
        let mut seen = [0usize; 2];
        for seed in 0..1000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let got = spl_legalize(&saddle, &SplConfig::default(), &mut rng).unwrap();
            assert!(is_permutation(&got.to_matrix(), 0.0));
            seen[got.as_slice()[0]] += 1;
        }
        assert!(seen[0] > 0 && seen[1] > 0, "{seen:?}");
    }

    #[test]
    fn budgeted_mode_prefers_few_crossings() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = RMat::from_row_slice(
            4,
            4,
            &[0.4, 0.3, 0.2, 0.1, 0.4, 0.3, 0.2, 0.1, 0.1, 0.2, 0.3, 0.4, 0.1, 0.2, 0.3, 0.4],
        );
        let cfg = SplConfig { crossing_budget: Some(0), max_attempts: 200, ..SplConfig::default() };
        let got = spl_legalize(&m, &cfg, &mut rng).unwrap();
        assert!(is_permutation(&got.to_matrix(), 0.0));
    }

    #[test]
    fn exhausted_attempts_report_failure() {
        // a single attempt cannot always succeed on a fully collided matrix
        let m = RMat::from_fn(6, 6, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let cfg = SplConfig { max_attempts: 1, ..SplConfig::default() };
        let mut failures = 0;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match spl_legalize(&m, &cfg, &mut rng) {
                Ok(p) => assert!(is_permutation(&p.to_matrix(), 0.0)),
                Err(PtcError::Legalization { attempts, best_effort }) => {
                    assert_eq!(attempts, 1);
                    assert_eq!(best_effort, vec![0; 6]);
                    failures += 1;
                }
                Err(e) => panic!("{e}"),
            }
        }
        assert!(failures > 0);
    }
}
