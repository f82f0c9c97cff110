//! Central finite-difference check of [`SuperMesh::loss_and_grad`] with the
//! Gumbel noise held fixed.

use super::supermesh::{Objective, SuperMesh};
use crate::error::Result;
use crate::train::{Batch, Task};

/// Agreement of one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupCheck {
    pub group: &'static str,
    pub ok: usize,
    pub total: usize,
    /// Largest relative error among the failures.
    pub worst: f64,
}

impl GroupCheck {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            return 1.0;
        }
        self.ok as f64 / self.total as f64
    }
}

#[derive(Clone, Debug)]
pub struct GradCheck<'a> {
    pub task: &'a Task,
    pub batch: &'a Batch,
    pub noise: &'a [[f64; 2]],
    pub tau: f64,
    pub step: f64,
    pub rel_tol: f64,
    /// Check every `stride`-th coordinate.
    pub stride: usize,
}

type Getter = fn(&SuperMesh) -> Vec<f64>;
type Setter = fn(&mut SuperMesh, &[f64]);

impl GradCheck<'_> {
    fn loss(&self, mesh: &SuperMesh, obj: &Objective<'_>) -> Result<f64> {
        let gates = mesh.gates_from_noise(self.noise, self.tau)?;
        Ok(mesh.loss(self.task, self.batch, &gates, obj)?.total())
    }

    /// Weights, couplers, permutations (while relaxed) and gate logits.
    /// A coordinate passes on relative error below `rel_tol`, or when the
    /// mismatch is under the round-off a central difference can resolve.
    pub fn run(&self, mesh: &SuperMesh, obj: &Objective<'_>) -> Result<Vec<GroupCheck>> {
        let gates = mesh.gates_from_noise(self.noise, self.tau)?;
        let (_, g) = mesh.loss_and_grad(self.task, self.batch, &gates, obj)?;
        let floor = 10.0 * f64::EPSILON * self.loss(mesh, obj)?.abs() / self.step;
        let mut groups: Vec<(&'static str, Getter, Setter, Vec<f64>)> = vec![
            ("weights", SuperMesh::weights_flat, SuperMesh::set_weights_flat, g.weights_flat()),
            ("couplers", SuperMesh::couplers_flat, SuperMesh::set_couplers_flat, g.couplers_flat()),
        ];
        if !mesh.is_legalized() {
            groups.push(("perms", SuperMesh::perms_flat, SuperMesh::set_perms_flat, g.perms_flat()));
        }
        groups.push(("theta", SuperMesh::theta_flat, SuperMesh::set_theta_flat, g.theta_flat(mesh)));

        let mut out = Vec::with_capacity(groups.len());
        for (group, get, set, analytic) in groups {
            let base = get(mesh);
            let mut check = GroupCheck { group, ok: 0, total: 0, worst: 0.0 };
            for i in (0..base.len()).step_by(self.stride.max(1)) {
                let mut m = mesh.clone();
                let mut v = base.clone();
                v[i] += self.step;
                set(&mut m, &v);
                let plus = self.loss(&m, obj)?;
                v[i] -= 2.0 * self.step;
                set(&mut m, &v);
                let minus = self.loss(&m, obj)?;
                let fd = (plus - minus) / (2.0 * self.step);
                let err = (fd - analytic[i]).abs();
                let scale = fd.abs().max(analytic[i].abs());
                check.total += 1;
                if err <= self.rel_tol * scale || err <= floor {
                    check.ok += 1;
                } else {
                    check.worst = check.worst.max(err / scale);
                }
            }
            out.push(check);
        }
        Ok(out)
    }
}
