//! Neumaier-compensated summation, so reductions are insensitive to term order.

#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().collect::<KahanSum>().value()
}

/// Mean of the values, or 0 for an empty sequence.
pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = KahanSum::new();
    let mut n = 0usize;
    for x in values {
        s.add(x);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s.value() / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cancelled_terms() {
        assert_eq!(sum([1.0, 1e100, 1.0, -1e100]), 2.0);
        assert_eq!(mean(std::iter::empty()), 0.0);
    }

    #[test]
    fn order_independent_for_shuffled_terms() {
        let v: Vec<f64> = (0..1000).map(|k| ((k * 7919) % 1013) as f64 * 1e-3 + 1e6).collect();
        let mut r = v.clone();
        r.reverse();
        assert!((sum(v) - sum(r)).abs() <= 1e-12 * 1e9);
    }
}
