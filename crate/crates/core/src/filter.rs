//! Running-average smoothing of fingertip force magnitudes.

use crate::error::{Error, Result};

/// Exponential moving average seeded by its first sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaFilter {
    alpha: f64,
    state: Option<f64>,
}

impl EmaFilter {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidAlpha(alpha));
        }
        Ok(Self { alpha, state: None })
    }

    /// Filter with a preset state, as if it had already seen samples.
    pub fn with_state(alpha: f64, state: f64) -> Result<Self> {
        let mut f = Self::new(alpha)?;
        f.state = Some(state);
        Ok(f)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn value(&self) -> Option<f64> {
        self.state
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    /// Blend in a sample. Non-finite samples are rejected and leave the state alone.
    pub fn update(&mut self, sample: f64) -> Result<f64> {
        if !sample.is_finite() {
            return Err(Error::RejectedSample(format!(
                "non-finite filter input {sample}"
            )));
        }
        let next = match self.state {
            None => sample,
            Some(prev) => self.alpha * sample + (1.0 - self.alpha) * prev,
        };
        self.state = Some(next);
        Ok(next)
    }
}

/// Mean over the fingertips in the contact set.
pub fn aggregate_normal(forces: &[f64]) -> Result<f64> {
    if forces.is_empty() {
        return Err(Error::EmptyContactSet);
    }
    Ok(forces.iter().sum::<f64>() / forces.len() as f64)
}

/// Filtered normal/tangential aggregates for one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredForces {
    pub normal: f64,
    pub tangential: f64,
}

/// Per-fingertip filter pairs plus the contact-set aggregate.
///
/// With `aggregate_first` the raw magnitudes are averaged first and a single
/// filter pair runs on the averages instead.
#[derive(Debug, Clone)]
pub struct ForceFilterBank {
    normal: Vec<EmaFilter>,
    tangential: Vec<EmaFilter>,
    contact: Vec<usize>,
    aggregate_first: bool,
}

impl ForceFilterBank {
    pub fn new(
        n_fingertips: usize,
        contact: Vec<usize>,
        alpha_n: f64,
        alpha_t: f64,
        aggregate_first: bool,
    ) -> Result<Self> {
        if contact.is_empty() {
            return Err(Error::EmptyContactSet);
        }
        if let Some(&bad) = contact.iter().find(|&&i| i >= n_fingertips) {
            return Err(Error::InvalidParams(format!(
                "contact fingertip {bad} out of range for {n_fingertips} fingertips"
            )));
        }
        let slots = if aggregate_first { 1 } else { n_fingertips };
        Ok(Self {
            normal: vec![EmaFilter::new(alpha_n)?; slots],
            tangential: vec![EmaFilter::new(alpha_t)?; slots],
            contact,
            aggregate_first,
        })
    }

    pub fn contact(&self) -> &[usize] {
        &self.contact
    }

    pub fn reset(&mut self) {
        self.normal
            .iter_mut()
            .chain(self.tangential.iter_mut())
            .for_each(EmaFilter::reset);
    }

    /// Feed one tick of per-fingertip magnitudes (indexed by fingertip).
    ///
    /// All inputs are checked before any filter is touched, so a rejected tick
    /// leaves the bank unchanged.
    pub fn update(&mut self, normal: &[f64], tangential: &[f64]) -> Result<FilteredForces> {
        if let Some(bad) = normal.iter().chain(tangential).find(|v| !v.is_finite()) {
            return Err(Error::RejectedSample(format!(
                "non-finite force magnitude {bad}"
            )));
        }
        if self.aggregate_first {
            let pick = |v: &[f64]| -> Vec<f64> { self.contact.iter().map(|&i| v[i]).collect() };
            let n = aggregate_normal(&pick(normal))?;
            let t = aggregate_normal(&pick(tangential))?;
            return Ok(FilteredForces {
                normal: self.normal[0].update(n)?,
                tangential: self.tangential[0].update(t)?,
            });
        }
        let mut fn_filtered = Vec::with_capacity(self.contact.len());
        let mut ft_filtered = Vec::with_capacity(self.contact.len());
        for (i, (n, t)) in normal.iter().zip(tangential).enumerate() {
            let fnv = self.normal[i].update(*n)?;
            let ftv = self.tangential[i].update(*t)?;
            if self.contact.contains(&i) {
                fn_filtered.push(fnv);
                ft_filtered.push(ftv);
            }
        }
        Ok(FilteredForces {
            normal: aggregate_normal(&fn_filtered)?,
            tangential: aggregate_normal(&ft_filtered)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ema_examples() {
        let mut f = EmaFilter::with_state(0.5, 0.0).unwrap();
        assert_eq!(f.update(10.0).unwrap(), 5.0);

        let mut f = EmaFilter::with_state(0.7, 100.0).unwrap();
        assert_eq!(f.update(100.0).unwrap(), 100.0);

        let mut f = EmaFilter::with_state(0.7, 0.0).unwrap();
        let got: Vec<f64> = (0..3).map(|_| f.update(100.0).unwrap()).collect();
        for (g, want) in got.iter().zip([70.0, 91.0, 97.3]) {
            assert!((g - want).abs() < 1e-9, "{g} vs {want}");
        }
    }

    #[test]
    fn first_sample_seeds_state() {
        let mut f = EmaFilter::new(0.1).unwrap();
        assert_eq!(f.value(), None);
        assert_eq!(f.update(42.0).unwrap(), 42.0);
    }

    #[test]
    fn rejects_bad_alpha_and_samples() {
        for a in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(EmaFilter::new(a).is_err(), "alpha {a}");
        }
        let mut f = EmaFilter::with_state(0.5, 3.0).unwrap();
        assert!(f.update(f64::NAN).is_err());
        assert_eq!(f.value(), Some(3.0));
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_normal(&[50.0]).unwrap(), 50.0);
        assert_eq!(aggregate_normal(&[40.0, 60.0]).unwrap(), 50.0);
        assert_eq!(aggregate_normal(&[30.0, 60.0, 90.0]).unwrap(), 60.0);
        assert!(matches!(aggregate_normal(&[]), Err(Error::EmptyContactSet)));
    }

    #[test]
    fn bank_ignores_fingers_outside_contact_set() {
        let mut bank = ForceFilterBank::new(3, vec![0, 1], 0.5, 0.7, false).unwrap();
        let out = bank
            .update(&[40.0, 60.0, 1000.0], &[1.0, 3.0, 500.0])
            .unwrap();
        assert_eq!(out.normal, 50.0);
        assert_eq!(out.tangential, 2.0);
    }

    #[test]
    fn bank_aggregate_first_matches_per_finger_for_linear_filter() {
        // the EMA is linear, so both orders agree once seeded identically
        let mut a = ForceFilterBank::new(2, vec![0, 1], 0.5, 0.7, false).unwrap();
        let mut b = ForceFilterBank::new(2, vec![0, 1], 0.5, 0.7, true).unwrap();
        for k in 0..10 {
            let n = [k as f64 * 3.0, 100.0 - k as f64];
            let t = [5.0, k as f64];
            let x = a.update(&n, &t).unwrap();
            let y = b.update(&n, &t).unwrap();
            assert!((x.normal - y.normal).abs() < 1e-9);
            assert!((x.tangential - y.tangential).abs() < 1e-9);
        }
    }

    #[test]
    fn bank_rejected_tick_leaves_state() {
        let mut bank = ForceFilterBank::new(2, vec![0, 1], 0.5, 0.7, false).unwrap();
        bank.update(&[10.0, 10.0], &[0.0, 0.0]).unwrap();
        assert!(bank.update(&[f64::NAN, 10.0], &[0.0, 0.0]).is_err());
        let out = bank.update(&[10.0, 10.0], &[0.0, 0.0]).unwrap();
        assert_eq!(out.normal, 10.0);
    }

    proptest! {
        #[test]
        fn update_is_convex(alpha in 0.001..0.999f64, prev in -1e4..1e4f64, s in -1e4..1e4f64) {
            let mut f = EmaFilter::with_state(alpha, prev).unwrap();
            let out = f.update(s).unwrap();
            let tol = 1e-9 * (1.0 + prev.abs().max(s.abs()));
            prop_assert!(out >= prev.min(s) - tol && out <= prev.max(s) + tol);
        }
    }
}
