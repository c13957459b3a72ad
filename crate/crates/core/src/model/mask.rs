use crate::diffmath::Real;

/// Admissibility flags over the `L + 1` output positions (labels then eos).
///
/// A label becomes inadmissible once emitted and stays so for the rest of
/// the episode. Eos is never masked.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    admissible: Vec<bool>,
}

impl LabelMask {
    pub fn new(num_labels: usize) -> Self {
        LabelMask {
            admissible: vec![true; num_labels + 1],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.admissible.len() - 1
    }

    pub fn eos(&self) -> usize {
        self.num_labels()
    }

    /// Marks `emitted` as predicted. Eos leaves the mask unchanged.
    pub fn update(&mut self, emitted: usize) {
        if emitted < self.num_labels() {
            self.admissible[emitted] = false;
        }
    }

    pub fn updated(mut self, emitted: usize) -> Self {
        self.update(emitted);
        self
    }

    pub fn is_admissible(&self, symbol: usize) -> bool {
        self.admissible.get(symbol).copied().unwrap_or(false)
    }

    pub fn admits_any(&self) -> bool {
        self.admissible.iter().any(|&a| a)
    }

    pub fn flags(&self) -> &[bool] {
        &self.admissible
    }

    /// `logits + I`: masked positions become `-inf`.
    pub fn apply<T: Real>(&self, logits: &[T]) -> Vec<T> {
        logits
            .iter()
            .zip(&self.admissible)
            .map(|(&v, &ok)| if ok { v } else { T::neg_infinity() })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emit_marks_only_that_label() {
        let m = LabelMask::new(4).updated(2);
        assert_eq!(m.flags(), &[true, true, false, true, true]);
    }

    #[test]
    fn eos_leaves_mask_unchanged() {
        let m = LabelMask::new(3).updated(1);
        assert_eq!(m.clone().updated(3), m);
    }

    #[test]
    fn exhausting_labels_leaves_only_eos() {
        let mut m = LabelMask::new(3);
        for j in 0..3 {
            m.update(j);
        }
        assert_eq!(m.flags(), &[false, false, false, true]);
        assert!(m.admits_any());
        let logits = m.apply(&[1.0f64, 2.0, 3.0, 0.0]);
        assert!(logits[..3].iter().all(|v| *v == f64::NEG_INFINITY));
    }
}
