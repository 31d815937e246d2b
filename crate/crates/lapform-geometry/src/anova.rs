//! Variance decomposition of labeled token sets into within-sequence,
//! between-sequence-within-class, and between-class parts.

use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, GeometryResult};
use crate::labeled::{token_means, LabeledTokenSet};

/// How the grand mean is formed from class means.
///
/// `CountWeighted` weights each class by its sequence count, which equals
/// the plain mean over all sequences; the decomposition identity is then
/// exact for any label distribution. `Unweighted` averages the class means
/// directly (classes with no members are skipped); the identity is exact
/// only for balanced sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassAveraging {
    CountWeighted,
    Unweighted,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnovaDecomposition {
    /// Mean squared distance of every token from the grand mean.
    pub total: f64,
    /// Mean squared distance of tokens from their sequence mean.
    pub within_seq: f64,
    /// Mean squared distance of sequence means from their class mean.
    pub within_class: f64,
    /// Mean squared distance of class means from the grand mean; averaged
    /// over sequences (count-weighted) or over classes (unweighted),
    /// depending on the chosen scheme.
    pub between_class: f64,
}

impl AnovaDecomposition {
    /// total minus the sum of the three components; zero (to rounding) when
    /// the averaging scheme makes the decomposition exact.
    pub fn residual(&self) -> f64 {
        self.total - self.within_seq - self.within_class - self.between_class
    }

    pub fn within_seq_fraction(&self) -> f64 {
        if self.total == 0.0 {
            return 0.0;
        }
        self.within_seq / self.total
    }

    pub fn between_class_fraction(&self) -> f64 {
        if self.total == 0.0 {
            return 0.0;
        }
        self.between_class / self.total
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn anova_decompose(
    set: &LabeledTokenSet,
    averaging: ClassAveraging,
) -> GeometryResult<AnovaDecomposition> {
    let tokens = set.tokens();
    let (b, t, d) = (tokens.batch(), tokens.seq_len(), tokens.dim());
    if b == 0 || t == 0 {
        return Err(GeometryError::Data("empty token set".into()));
    }

    let seq_means = token_means(tokens);
    let groups = set.class_indices();

    // Class means as unweighted averages of their sequences' means.
    let mut class_means: Vec<Option<Vec<f64>>> = vec![None; set.num_classes()];
    for (c, members) in groups.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; d];
        for &s in members {
            for (m, v) in mean.iter_mut().zip(seq_means.row(s)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= members.len() as f64;
        }
        class_means[c] = Some(mean);
    }

    let mut grand = vec![0.0; d];
    match averaging {
        ClassAveraging::CountWeighted => {
            for s in 0..b {
                for (g, v) in grand.iter_mut().zip(seq_means.row(s)) {
                    *g += v;
                }
            }
            for g in &mut grand {
                *g /= b as f64;
            }
        }
        ClassAveraging::Unweighted => {
            let present = class_means.iter().flatten().count();
            if present == 0 {
                return Err(GeometryError::Data("no class has any member".into()));
            }
            for mean in class_means.iter().flatten() {
                for (g, v) in grand.iter_mut().zip(mean) {
                    *g += v;
                }
            }
            for g in &mut grand {
                *g /= present as f64;
            }
        }
    }

    let mut total = 0.0;
    let mut within_seq = 0.0;
    for s in 0..b {
        for i in 0..t {
            let x = tokens.token(s, i);
            total += sq_dist(x, &grand);
            within_seq += sq_dist(x, seq_means.row(s));
        }
    }
    total /= (b * t) as f64;
    within_seq /= (b * t) as f64;

    let mut within_class_sum = 0.0;
    for (s, label) in set.labels().iter().enumerate() {
        let class_mean = class_means[*label]
            .as_ref()
            .expect("labeled class always has at least this member");
        within_class_sum += sq_dist(seq_means.row(s), class_mean);
    }
    within_class_sum /= b as f64;

    // The between-class average runs over sequences in the count-weighted
    // scheme and over (present) classes in the unweighted one; the two agree
    // on balanced sets, and only the former closes the identity in general.
    let mut between_class = 0.0;
    match averaging {
        ClassAveraging::CountWeighted => {
            for label in set.labels() {
                let class_mean = class_means[*label].as_ref().unwrap();
                between_class += sq_dist(class_mean, &grand);
            }
            between_class /= b as f64;
        }
        ClassAveraging::Unweighted => {
            let present = class_means.iter().flatten().count();
            for mean in class_means.iter().flatten() {
                between_class += sq_dist(mean, &grand);
            }
            between_class /= present as f64;
        }
    }

    Ok(AnovaDecomposition {
        total,
        within_seq,
        within_class: within_class_sum,
        between_class,
    })
}
