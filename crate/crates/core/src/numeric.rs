//! Small numeric helpers shared across modules.

/// Compensated running sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    /// Branch-free TwoSum update.
    #[inline(always)]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        let xp = t - self.sum;
        let sp = t - xp;
        self.carry += (self.sum - sp) + (x - xp);
        self.sum = t;
    }

    #[inline(always)]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl CompensatedSum {
    pub(crate) fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.carry);
    }
}
