//! Max-posterior ensembling: the prediction comes from whichever member is
//! most confident anywhere.

use super::{CellType, PosteriorVector, NUM_CLASSES};
use crate::error::{CoreError, Result};

/// Select the single (member, class) cell with the globally maximal
/// posterior. Ties break to the lower member index, then lower class index.
pub fn ensemble_predict(members: &[PosteriorVector]) -> Result<(CellType, f64)> {
    if members.is_empty() {
        return Err(CoreError::Model("ensemble needs at least one member".into()));
    }
    let mut best_class = 0usize;
    let mut best_value = f64::NEG_INFINITY;
    for member in members {
        let values = member.values();
        for (ci, &v) in values.iter().enumerate().take(NUM_CLASSES) {
            if v > best_value {
                best_value = v;
                best_class = ci;
            }
        }
    }
    Ok((CellType::ALL[best_class], best_value))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn peaked(class: usize, peak: f64) -> PosteriorVector {
        let rest = (1.0 - peak) / 4.0;
        let mut v = [rest; 5];
        v[class] = peak;
        PosteriorVector::new(v).unwrap()
    }

    #[test]
    fn most_confident_member_wins() {
        let a = peaked(0, 0.6); // CYT
        let b = peaked(1, 0.9); // FIB
        assert_eq!(ensemble_predict(&[a, b]).unwrap(), (CellType::Fib, 0.9));
        // Member order must not matter here.
        assert_eq!(ensemble_predict(&[b, a]).unwrap(), (CellType::Fib, 0.9));
    }

    #[test]
    fn agreeing_members_return_that_class() {
        let p = peaked(3, 0.8);
        let (class, conf) = ensemble_predict(&[p, p, p]).unwrap();
        assert_eq!(class, CellType::Syn);
        assert_eq!(conf, 0.8);
    }

    #[test]
    fn single_member_is_plain_argmax() {
        let p = PosteriorVector::new([0.1, 0.15, 0.4, 0.2, 0.15]).unwrap();
        assert_eq!(ensemble_predict(&[p]).unwrap(), p.argmax());
    }

    #[test]
    fn ties_break_to_lower_member_then_class() {
        let a = peaked(2, 0.5);
        let b = peaked(1, 0.5);
        // Equal peaks: member 0 (class HOF) wins over member 1 (FIB).
        assert_eq!(ensemble_predict(&[a, b]).unwrap().0, CellType::Hof);
        // Within one member, lower class index wins.
        let tie = PosteriorVector::new([0.3, 0.3, 0.2, 0.1, 0.1]).unwrap();
        assert_eq!(ensemble_predict(&[tie]).unwrap().0, CellType::Cyt);
    }

    #[test]
    fn empty_ensemble_is_an_error() {
        assert!(ensemble_predict(&[]).is_err());
    }
}
