//! Biased matrix factorization fitted by stochastic gradient descent on the
//! observed entries only.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::CollabError;
use crate::domain::{QuestionId, UserId};
use crate::ratings::RatingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FactorConfig {
    /// Latent dimension.
    pub k: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub seed: u64,
    /// Standard deviation of the initial factor entries.
    pub init_std: f64,
}

impl Default for FactorConfig {
    fn default() -> Self {
        Self {
            k: 8,
            epochs: 50,
            learning_rate: 0.005,
            regularization: 0.02,
            seed: 0,
            init_std: 0.1,
        }
    }
}

/// Learned parameters: `r(u, q) ~ mean + b_u + b_q + p_u . q_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub k: usize,
    pub global_mean: f64,
    pub user_bias: Vec<f64>,
    pub question_bias: Vec<f64>,
    /// Row-major |U| x k.
    pub user_factors: Vec<f64>,
    /// Row-major |Q| x k.
    pub question_factors: Vec<f64>,
    pub users: Vec<UserId>,
    pub questions: Vec<QuestionId>,
    /// Training RMSE after each epoch.
    pub epoch_rmse: Vec<f64>,
    #[serde(skip)]
    user_index: HashMap<UserId, usize>,
    #[serde(skip)]
    question_index: HashMap<QuestionId, usize>,
}

impl FactorModel {
    fn rebuild_index(&mut self) {
        self.user_index = self.users.iter().cloned().enumerate().map(|(i, u)| (u, i)).collect();
        self.question_index = self
            .questions
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, q)| (q, i))
            .collect();
    }

    pub fn user_index(&self, u: &UserId) -> Option<usize> {
        self.user_index.get(u).copied()
    }

    pub fn question_index(&self, q: &QuestionId) -> Option<usize> {
        self.question_index.get(q).copied()
    }

    fn user_row(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.k..(u + 1) * self.k]
    }

    fn question_row(&self, q: usize) -> &[f64] {
        &self.question_factors[q * self.k..(q + 1) * self.k]
    }

    /// Unclamped model output for indexed user and question.
    pub fn predict_raw(&self, u: usize, q: usize) -> f64 {
        let dot: f64 = self.user_row(u).iter().zip(self.question_row(q)).map(|(a, b)| a * b).sum();
        self.global_mean + self.user_bias[u] + self.question_bias[q] + dot
    }

    /// Clamped to the rating range.
    pub fn predict(&self, user: &UserId, question: &QuestionId) -> Result<f64, CollabError> {
        let u = self
            .user_index(user)
            .ok_or_else(|| CollabError::UnknownUser(user.clone()))?;
        let q = self
            .question_index(question)
            .ok_or_else(|| CollabError::UnknownQuestion(question.clone()))?;
        Ok(self.predict_raw(u, q).clamp(1.0, 5.0))
    }

    /// Estimate for a question the model has never seen: global mean plus user bias.
    pub fn predict_cold_question(&self, user: &UserId) -> Option<f64> {
        self.user_index(user)
            .map(|u| (self.global_mean + self.user_bias[u]).clamp(1.0, 5.0))
    }

    pub fn rmse(&self, matrix: &RatingMatrix) -> f64 {
        let mut se = 0.0;
        let mut n = 0usize;
        for (u, q, r) in matrix.entries() {
            let (Some(mu), Some(mq)) = (
                self.user_index(&matrix.users()[u]),
                self.question_index(&matrix.questions()[q]),
            ) else {
                continue;
            };
            let e = r as f64 - self.predict_raw(mu, mq);
            se += e * e;
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            (se / n as f64).sqrt()
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        let mut m: Self = serde_json::from_str(text)?;
        m.rebuild_index();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json().map_err(std::io::Error::other)?)
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?).map_err(std::io::Error::other)
    }
}

/// SGD over shuffled observed entries. An epoch that raises the training RMSE is
/// rolled back and the step size halved, so `epoch_rmse` never increases.
pub fn train_factor_model(matrix: &RatingMatrix, config: &FactorConfig) -> Result<FactorModel, CollabError> {
    if matrix.nnz() == 0 {
        return Err(CollabError::EmptyMatrix);
    }
    if config.k == 0 {
        return Err(CollabError::InvalidConfig("k must be at least 1".into()));
    }
    let k = config.k;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_std.max(0.0))
        .map_err(|e| CollabError::InvalidConfig(e.to_string()))?;
    let mut init = |n: usize| -> Vec<f64> { (0..n * k).map(|_| normal.sample(&mut rng)).collect() };
    let user_factors = init(matrix.n_users());
    let question_factors = init(matrix.n_questions());
    let mut model = FactorModel {
        k,
        global_mean: matrix.mean().unwrap_or(3.0),
        user_bias: vec![0.0; matrix.n_users()],
        question_bias: vec![0.0; matrix.n_questions()],
        user_factors,
        question_factors,
        users: matrix.users().to_vec(),
        questions: matrix.questions().to_vec(),
        epoch_rmse: Vec::with_capacity(config.epochs),
        user_index: HashMap::new(),
        question_index: HashMap::new(),
    };
    model.rebuild_index();

    let entries: Vec<(usize, usize, f64)> = matrix.entries().map(|(u, q, r)| (u, q, r as f64)).collect();
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let mut lr = config.learning_rate;
    let reg = config.regularization;
    let mut prev = model.rmse(matrix);
    for _ in 0..config.epochs {
        let saved = (
            model.user_bias.clone(),
            model.question_bias.clone(),
            model.user_factors.clone(),
            model.question_factors.clone(),
        );
        order.shuffle(&mut rng);
        for &i in &order {
            let (u, q, r) = entries[i];
            let err = r - model.predict_raw(u, q);
            model.user_bias[u] += lr * (err - reg * model.user_bias[u]);
            model.question_bias[q] += lr * (err - reg * model.question_bias[q]);
            for f in 0..k {
                let pu = model.user_factors[u * k + f];
                let qi = model.question_factors[q * k + f];
                model.user_factors[u * k + f] += lr * (err * qi - reg * pu);
                model.question_factors[q * k + f] += lr * (err * pu - reg * qi);
            }
        }
        let rmse = model.rmse(matrix);
        if rmse.is_finite() && rmse <= prev {
            prev = rmse;
        } else {
            (model.user_bias, model.question_bias, model.user_factors, model.question_factors) = saved;
            lr *= 0.5;
        }
        model.epoch_rmse.push(prev);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratings::Rating;

    fn matrix(cells: &[(&str, &str, u8)]) -> RatingMatrix {
        RatingMatrix::from_ratings(
            cells
                .iter()
                .map(|&(u, q, v)| Rating::new(u.into(), q.into(), v).unwrap()),
        )
    }

    #[test]
    fn empty_matrix_rejected() {
        let m = RatingMatrix::from_ratings(vec![]);
        assert!(matches!(
            train_factor_model(&m, &FactorConfig::default()),
            Err(CollabError::EmptyMatrix)
        ));
    }

    #[test]
    fn memorizes_single_entry() {
        let m = matrix(&[("u", "q", 4)]);
        let cfg = FactorConfig {
            k: 1,
            epochs: 200,
            learning_rate: 0.05,
            ..FactorConfig::default()
        };
        let model = train_factor_model(&m, &cfg).unwrap();
        assert!((model.predict(&"u".into(), &"q".into()).unwrap() - 4.0).abs() < 0.1);
    }

    #[test]
    fn rank_one_matrix_fits() {
        // Outer product of (1, 1.5, 2) and (1.5, 2, 2.5), clipped to [1, 5].
        let a = [1.0, 1.5, 2.0];
        let b = [1.5, 2.0, 2.5];
        let mut cells = Vec::new();
        let users = ["u0", "u1", "u2"];
        let qs = ["q0", "q1", "q2"];
        for (i, u) in users.iter().enumerate() {
            for (j, q) in qs.iter().enumerate() {
                let v: f64 = a[i] * b[j];
                cells.push((*u, *q, v.clamp(1.0, 5.0).round() as u8));
            }
        }
        let m = matrix(&cells);
        let cfg = FactorConfig {
            k: 1,
            epochs: 3000,
            learning_rate: 0.02,
            regularization: 0.0,
            seed: 7,
            init_std: 0.1,
        };
        let model = train_factor_model(&m, &cfg).unwrap();
        let rmse = *model.epoch_rmse.last().unwrap();
        assert!(rmse < 0.05, "rmse {rmse}");
        for w in model.epoch_rmse.windows(2) {
            assert!(w[1] <= w[0] + 1e-6);
        }
    }

    #[test]
    fn same_seed_same_bits_and_json_round_trip() {
        let m = matrix(&[("a", "x", 1), ("a", "y", 5), ("b", "x", 3), ("c", "y", 2)]);
        let cfg = FactorConfig {
            k: 3,
            seed: 11,
            ..FactorConfig::default()
        };
        let m1 = train_factor_model(&m, &cfg).unwrap();
        let m2 = train_factor_model(&m, &cfg).unwrap();
        assert_eq!(m1, m2);
        let back = FactorModel::from_json(&m1.to_json().unwrap()).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.user_factors), bits(&m1.user_factors));
        assert_eq!(bits(&back.question_factors), bits(&m1.question_factors));
        assert_eq!(back.global_mean.to_bits(), m1.global_mean.to_bits());
        assert_eq!(back.predict(&"a".into(), &"y".into()), m1.predict(&"a".into(), &"y".into()));
    }
}
