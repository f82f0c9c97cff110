use crate::error::{PtcError, Result};
use crate::search::{SuperMesh, Topology};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Zero-mean Gaussian drift added to every phase shifter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Standard deviation in radians.
    pub phase_sigma: f64,
}

impl NoiseModel {
    pub fn new(phase_sigma: f64) -> Result<Self> {
        if !(phase_sigma >= 0.0 && phase_sigma.is_finite()) {
            return Err(PtcError::Domain(format!("phase noise must be a nonnegative number, got {phase_sigma}")));
        }
        Ok(Self { phase_sigma })
    }

    /// Adds a fresh draw to each entry; a zero sigma leaves them untouched.
    pub fn perturb<R: Rng + ?Sized>(&self, phases: &mut [f64], rng: &mut R) {
        if self.phase_sigma == 0.0 {
            return;
        }
        let d = Normal::new(0.0, self.phase_sigma).expect("validated sigma");
        phases.iter_mut().for_each(|p| *p += d.sample(rng));
    }
}

/// Copy of `mesh` with every phase of every tile perturbed.
pub fn inject_phase_noise<R: Rng + ?Sized>(mesh: &SuperMesh, noise: &NoiseModel, rng: &mut R) -> SuperMesh {
    let mut out = mesh.clone();
    for tile in out.layers.iter_mut().flat_map(|l| l.tiles.iter_mut()) {
        for col in tile.phases_u.iter_mut().chain(tile.phases_v.iter_mut()) {
            noise.perturb(col, rng);
        }
    }
    out
}

/// Copy of `top` with its phase snapshot perturbed.
pub fn inject_topology_noise<R: Rng + ?Sized>(top: &Topology, noise: &NoiseModel, rng: &mut R) -> Topology {
    let mut out = top.clone();
    for b in out.u.iter_mut().chain(out.v.iter_mut()) {
        noise.perturb(&mut b.phases, rng);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::unitarity_error;
    use crate::search::{GateDraw, SteMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_sigma_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = SuperMesh::from_topology(&Topology::brick(4, 2, true), &[(4, 4)], &mut rng).unwrap();
        assert_eq!(inject_phase_noise(&m, &NoiseModel::new(0.0).unwrap(), &mut rng), m);
        assert!(NoiseModel::new(-0.1).is_err());
    }

    #[test]
    fn sample_std_matches() {
        let n = NoiseModel::new(0.02).unwrap();
        let mut v = vec![0.0; 100_000];
        n.perturb(&mut v, &mut ChaCha8Rng::seed_from_u64(11));
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!((0.0195..=0.0205).contains(&var.sqrt()), "{}", var.sqrt());
    }

    #[test]
    fn noisy_legal_mesh_stays_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = SuperMesh::from_topology(&Topology::brick(8, 3, true), &[(8, 8)], &mut rng).unwrap();
        m.layers[0].tiles[0].sigma = vec![1.0; 8];
        let noisy = inject_phase_noise(&m, &NoiseModel::new(0.3).unwrap(), &mut rng);
        let gates: GateDraw = noisy.certain_gates();
        let w = noisy.assemble(&gates, SteMode::Binarized).unwrap();
        assert!(unitarity_error(&w[0]) < 1e-10);
        assert_ne!(noisy, m);
    }
}
