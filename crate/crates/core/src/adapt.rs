//! Unsupervised domain adaptation: score the unlabeled target course with
//! a source-trained model, binarize the predictions into pseudo-labels,
//! freeze everything but the final FC layer, and continue training on the
//! pseudo-labeled target set. The oracle variant runs the same fine-tune
//! with true target labels instead.

use serde::{Deserialize, Serialize};

use crate::encoding::EncodedSequence;
use crate::error::{Error, Result};
use crate::gritnet::{predict, train, GritNetModel, TrainConfig, TrainHistory};

/// Target sequences with the hard labels assigned by thresholding the
/// source model's probabilities at `theta` (`label = p >= theta`).
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledSet {
    pub sequences: Vec<EncodedSequence>,
    pub pseudo_labels: Vec<bool>,
    /// The probabilities the labels were derived from, kept for diagnostics.
    pub probabilities: Vec<f64>,
    pub theta: f64,
}

impl PseudoLabeledSet {
    pub fn positive_rate(&self) -> f64 {
        if self.pseudo_labels.is_empty() {
            return 0.0;
        }
        let pos = self.pseudo_labels.iter().filter(|&&l| l).count();
        pos as f64 / self.pseudo_labels.len() as f64
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::invalid_argument(format!("theta must lie in (0, 1), got {theta}")));
    }
    Ok(())
}

/// Scores the target set with the source model and assigns
/// `label = indicator(p >= theta)` to every example.
pub fn assign_pseudo_labels(
    source_model: &GritNetModel,
    target: &[EncodedSequence],
    theta: f64,
) -> Result<PseudoLabeledSet> {
    check_theta(theta)?;
    let probabilities = predict(source_model, target)?;
    let pseudo_labels = probabilities.iter().map(|&p| p >= theta).collect();
    Ok(PseudoLabeledSet { sequences: target.to_vec(), pseudo_labels, probabilities, theta })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AdaptConfig {
    pub train: TrainConfig,
    /// Optional variant: instead of hard-labeling every example, keep only
    /// confidently scored ones (`p <= theta` as negatives, `p >= 1 - theta`
    /// as positives) and drop the band in between.
    pub confidence_filter: bool,
}

impl Default for AdaptConfig {
    fn default() -> AdaptConfig {
        AdaptConfig {
            train: TrainConfig { epochs: 5, patience: None, ..TrainConfig::default() },
            confidence_filter: false,
        }
    }
}

/// Result of one adaptation run. `pseudo` always records the full
/// indicator assignment; `used` is how many examples the fine-tune
/// actually trained on (smaller only under the confidence filter).
#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub model: GritNetModel,
    pub pseudo: PseudoLabeledSet,
    pub used: usize,
    pub history: TrainHistory,
}

fn fine_tune(
    source_model: &GritNetModel,
    sequences: &[EncodedSequence],
    labels: &[bool],
    config: &TrainConfig,
) -> Result<(GritNetModel, TrainHistory)> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::invalid_argument(
            "pseudo-labels are all one class; pick a different theta",
        ));
    }
    let mut adapted = source_model.clone();
    for group in ["embedding", "lstm_fwd", "lstm_bwd"] {
        adapted.params.set_group_frozen(group, true);
    }
    adapted.params.set_group_frozen("fc", false);
    // fine-tuning starts from fresh optimizer state
    adapted.params.reset_rms();

    let relabeled: Vec<EncodedSequence> = sequences
        .iter()
        .zip(labels)
        .map(|(s, &label)| EncodedSequence {
            student_id: s.student_id.clone(),
            label,
            events: s.events.clone(),
        })
        .collect();
    let history = train(&mut adapted, &relabeled, config, None)?;
    Ok((adapted, history))
}

/// Full adaptation pass: pseudo-label the target course, freeze all
/// parameter groups except `fc`, continue training on the pseudo-labeled
/// set, and return the adapted model together with the labels used.
pub fn domain_adapt(
    source_model: &GritNetModel,
    target: &[EncodedSequence],
    theta: f64,
    config: &AdaptConfig,
) -> Result<AdaptOutcome> {
    let pseudo = assign_pseudo_labels(source_model, target, theta)?;
    if target.is_empty() {
        return Err(Error::invalid_argument("target set is empty"));
    }

    let (sequences, labels, used) = if config.confidence_filter {
        let mut seqs = Vec::new();
        let mut labels = Vec::new();
        for (s, &p) in target.iter().zip(&pseudo.probabilities) {
            if p >= 1.0 - theta {
                seqs.push(s.clone());
                labels.push(true);
            } else if p <= theta {
                seqs.push(s.clone());
                labels.push(false);
            }
        }
        if seqs.is_empty() {
            return Err(Error::invalid_argument(
                "confidence filter kept no target examples; pick a different theta",
            ));
        }
        let used = seqs.len();
        (seqs, labels, used)
    } else {
        (target.to_vec(), pseudo.pseudo_labels.clone(), target.len())
    };

    let (model, history) = fine_tune(source_model, &sequences, &labels, &config.train)?;
    Ok(AdaptOutcome { model, pseudo, used, history })
}

/// Runs [`domain_adapt`] for every threshold in the grid; failures for
/// individual thresholds are reported in place rather than aborting the
/// sweep.
pub fn domain_adapt_sweep(
    source_model: &GritNetModel,
    target: &[EncodedSequence],
    thetas: &[f64],
    config: &AdaptConfig,
) -> Vec<(f64, Result<AdaptOutcome>)> {
    thetas
        .iter()
        .map(|&theta| (theta, domain_adapt(source_model, target, theta, config)))
        .collect()
}

/// The upper-bound arm: identical fine-tune but with true target labels,
/// skipping the scoring and pseudo-label assignment steps.
pub fn oracle_adapt(
    source_model: &GritNetModel,
    target: &[EncodedSequence],
    true_labels: &[bool],
    config: &AdaptConfig,
) -> Result<AdaptOutcome> {
    if true_labels.len() != target.len() {
        return Err(Error::invalid_argument(format!(
            "label vector length {} does not match target set size {}",
            true_labels.len(),
            target.len()
        )));
    }
    if target.is_empty() {
        return Err(Error::invalid_argument("target set is empty"));
    }
    let (model, history) = fine_tune(source_model, target, true_labels, &config.train)?;
    let pseudo = PseudoLabeledSet {
        sequences: target.to_vec(),
        pseudo_labels: true_labels.to_vec(),
        probabilities: Vec::new(),
        theta: f64::NAN,
    };
    Ok(AdaptOutcome { model, pseudo, used: target.len(), history })
}

/// JSON adaptation report emitted next to each adapted checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AdaptReport {
    pub theta: f64,
    pub pseudo_positive_rate: f64,
    pub examples_used: usize,
    pub per_epoch_loss: Vec<f64>,
    pub checkpoint: String,
}

impl AdaptReport {
    pub fn from_outcome(outcome: &AdaptOutcome, checkpoint: impl Into<String>) -> AdaptReport {
        AdaptReport {
            theta: outcome.pseudo.theta,
            pseudo_positive_rate: outcome.pseudo.positive_rate(),
            examples_used: outcome.used,
            per_epoch_loss: outcome.history.epochs.iter().map(|e| e.train_loss).collect(),
            checkpoint: checkpoint.into(),
        }
    }
}
