use crate::error::{PtcError, Result};
use crate::linalg::{random_unitary, random_with_singular_values, CMat, RMat};
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;

/// Fit one or more complex target matrices.
#[derive(Clone, Debug)]
pub struct MatrixFitTask {
    pub targets: Vec<CMat>,
}

impl MatrixFitTask {
    pub fn new(targets: Vec<CMat>) -> Result<Self> {
        if targets.is_empty() {
            return Err(PtcError::Domain("matrix fit needs at least one target".into()));
        }
        if let Some(t) = targets.iter().find(|t| t.is_empty()) {
            return Err(PtcError::Domain(format!("empty {}x{} target", t.nrows(), t.ncols())));
        }
        Ok(Self { targets })
    }

    pub fn random_unitaries<R: Rng + ?Sized>(k: usize, count: usize, rng: &mut R) -> Result<Self> {
        Self::new((0..count).map(|_| random_unitary(k, rng)).collect())
    }

    pub fn with_singular_values<R: Rng + ?Sized>(
        m: usize,
        n: usize,
        singular: &[f64],
        count: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new((0..count).map(|_| random_with_singular_values(m, n, singular, rng)).collect())
    }
}

/// Feature columns (`features x samples`) with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: RMat,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.nrows()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self { features: self.features.select_columns(idx), labels: idx.iter().map(|&i| self.labels[i]).collect() }
    }
}

/// Linear classifier on real parts of `W x`, trained on `train` and scored on `val`.
#[derive(Clone, Debug)]
pub struct ClassifyTask {
    pub num_classes: usize,
    pub train: Dataset,
    pub val: Dataset,
}

impl ClassifyTask {
    pub fn new(num_classes: usize, train: Dataset, val: Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(PtcError::Domain("empty training split".into()));
        }
        if train.num_features() != val.num_features() && !val.is_empty() {
            return Err(PtcError::Dimension { expected: train.num_features(), actual: val.num_features() });
        }
        if let Some(&l) = train.labels.iter().chain(&val.labels).find(|&&l| l >= num_classes) {
            return Err(PtcError::Domain(format!("label {l} out of range for {num_classes} classes")));
        }
        Ok(Self { num_classes, train, val })
    }
}

#[derive(Clone, Debug)]
pub enum Task {
    MatrixFit(MatrixFitTask),
    Classify(ClassifyTask),
}

/// Which training samples a step sees. Matrix fitting ignores it.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Batch {
    #[default]
    Full,
    Indices(Vec<usize>),
}

impl Task {
    /// `(rows, cols)` of every weight the task trains.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        match self {
            Task::MatrixFit(t) => t.targets.iter().map(|m| m.shape()).collect(),
            Task::Classify(t) => vec![(t.num_classes, t.train.num_features())],
        }
    }

    /// Lower is better for `mse`, higher for `accuracy`.
    pub fn metric_name(&self) -> &'static str {
        match self {
            Task::MatrixFit(_) => "mse",
            Task::Classify(_) => "accuracy",
        }
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Batch {
        match self {
            Task::Classify(t) if batch_size > 0 && batch_size < t.train.len() => {
                let mut idx = sample(rng, t.train.len(), batch_size).into_vec();
                idx.sort_unstable();
                Batch::Indices(idx)
            }
            _ => Batch::Full,
        }
    }
}

fn check_shapes(task: &Task, weights: &[CMat]) -> Result<()> {
    let shapes = task.layer_shapes();
    if shapes.len() != weights.len() {
        return Err(PtcError::Dimension { expected: shapes.len(), actual: weights.len() });
    }
    for (s, w) in shapes.iter().zip(weights) {
        if *s != w.shape() {
            return Err(PtcError::Dimension { expected: s.0 * s.1, actual: w.len() });
        }
    }
    Ok(())
}

/// Task loss and its cotangent with respect to every dense weight.
///
/// Matrix fit: mean over targets of `||W - T||_F^2 / (M N)`. Classify:
/// mean softmax cross-entropy of `Re(W x)`.
pub fn task_loss(task: &Task, weights: &[CMat], batch: &Batch) -> Result<(f64, Vec<CMat>)> {
    check_shapes(task, weights)?;
    match task {
        Task::MatrixFit(t) => {
            let n = t.targets.len() as f64;
            let mut loss = 0.0;
            let mut grads = Vec::with_capacity(weights.len());
            for (w, target) in weights.iter().zip(&t.targets) {
                let scale = 1.0 / (w.len() as f64 * n);
                let d = w - target;
                loss += d.iter().map(|z| z.norm_sqr()).sum::<f64>() * scale;
                grads.push(d * Complex64::new(2.0 * scale, 0.0));
            }
            Ok((loss, grads))
        }
        Task::Classify(t) => {
            let data = match batch {
                Batch::Full => t.train.clone(),
                Batch::Indices(idx) => t.train.subset(idx),
            };
            let (loss, g) = cross_entropy(&weights[0], &data, t.num_classes);
            Ok((loss, vec![g]))
        }
    }
}

fn logits(w: &CMat, x: &RMat) -> RMat {
    let re = w.map(|z| z.re);
    re * x
}

fn cross_entropy(w: &CMat, data: &Dataset, classes: usize) -> (f64, CMat) {
    let z = logits(w, &data.features);
    let n = data.len() as f64;
    let mut loss = 0.0;
    let mut dz = RMat::zeros(classes, data.len());
    for (s, col) in z.column_iter().enumerate() {
        let max = col.max();
        let exps: Vec<f64> = col.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let label = data.labels[s];
        loss += sum.ln() + max - col[label];
        for c in 0..classes {
            dz[(c, s)] = (exps[c] / sum - f64::from(u8::from(c == label))) / n;
        }
    }
    let g = dz * data.features.transpose();
    (loss / n, g.map(|v| Complex64::new(v, 0.0)))
}

/// Matrix fit: task loss over all targets. Classify: validation accuracy
/// (training accuracy when the validation split is empty).
pub fn task_metric(task: &Task, weights: &[CMat]) -> Result<f64> {
    check_shapes(task, weights)?;
    match task {
        Task::MatrixFit(_) => task_loss(task, weights, &Batch::Full).map(|(l, _)| l),
        Task::Classify(t) => {
            let data = if t.val.is_empty() { &t.train } else { &t.val };
            let z = logits(&weights[0], &data.features);
            let hits = z.column_iter().zip(&data.labels).filter(|(col, &l)| col.argmax().0 == l).count();
            Ok(hits as f64 / data.len() as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::identity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_c<R: Rng>(m: usize, n: usize, rng: &mut R) -> CMat {
        CMat::from_fn(m, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn matrix_fit_examples() {
        let task = Task::MatrixFit(MatrixFitTask::new(vec![identity(8)]).unwrap());
        let (l, _) = task_loss(&task, &[identity(8)], &Batch::Full).unwrap();
        assert_eq!(l, 0.0);
        let (l, _) = task_loss(&task, &[CMat::zeros(8, 8)], &Batch::Full).unwrap();
        assert!((l - 0.125).abs() < 1e-15);
        assert!(task_loss(&task, &[CMat::zeros(4, 8)], &Batch::Full).is_err());
    }

    fn fd_check(task: &Task, w: &[CMat], batch: &Batch) {
        let (_, g) = task_loss(task, w, batch).unwrap();
        let h = 1e-6;
        for (li, wl) in w.iter().enumerate() {
            for idx in 0..wl.len() {
                for dir in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
                    let mut a = w.to_vec();
                    a[li][idx] += dir * h;
                    let mut b = w.to_vec();
                    b[li][idx] -= dir * h;
                    let fd =
                        (task_loss(task, &a, batch).unwrap().0 - task_loss(task, &b, batch).unwrap().0) / (2.0 * h);
                    let an = (g[li][idx].conj() * dir).re;
                    assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), "{fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let task = Task::MatrixFit(MatrixFitTask::new(vec![rand_c(3, 5, &mut rng), rand_c(4, 4, &mut rng)]).unwrap());
        fd_check(&task, &[rand_c(3, 5, &mut rng), rand_c(4, 4, &mut rng)], &Batch::Full);

        let features = RMat::from_fn(5, 12, |_, _| rng.random_range(0.0..1.0));
        let labels = (0..12).map(|i| i % 3).collect();
        let data = Dataset { features, labels };
        let task = Task::Classify(ClassifyTask::new(3, data.clone(), data).unwrap());
        fd_check(&task, &[rand_c(3, 5, &mut rng)], &Batch::Indices(vec![0, 3, 4, 9]));
    }

    #[test]
    fn accuracy_and_batches() {
        let features = RMat::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let data = Dataset { features, labels: vec![0, 1] };
        let task = Task::Classify(ClassifyTask::new(2, data.clone(), data).unwrap());
        assert_eq!(task_metric(&task, &[identity(2)]).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(task.sample_batch(5, &mut rng), Batch::Full);
        match task.sample_batch(1, &mut rng) {
            Batch::Indices(i) => assert_eq!(i.len(), 1),
            Batch::Full => panic!("expected a minibatch"),
        }
    }

    #[test]
    fn label_range_checked() {
        let data = Dataset { features: RMat::zeros(2, 1), labels: vec![4] };
        assert!(ClassifyTask::new(3, data.clone(), data).is_err());
    }
}
