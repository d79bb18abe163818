use serde::{Deserialize, Serialize};

/// Empirical complementary distribution function `r -> #{x >= r} / n`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Ccdf {
    values: Vec<f64>,
}

impl Ccdf {
    /// Panics on NaN.
    pub fn new(mut values: Vec<f64>) -> Self {
        assert!(values.iter().all(|v| !v.is_nan()), "NaN in sample");
        values.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
        Ccdf { values }
    }

    pub fn from_counts(xs: &[u64]) -> Self {
        Ccdf::new(xs.iter().map(|&x| x as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sorted sample, ascending.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of samples `>= r`.
    pub fn count_at_least(&self, r: f64) -> usize {
        self.values.len() - self.values.partition_point(|&v| v < r)
    }

    pub fn eval(&self, r: f64) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.count_at_least(r) as f64 / self.values.len() as f64
    }

    /// Lower empirical quantile: the smallest `x` with `F(x) >= q`.
    pub fn quantile(&self, q: f64) -> f64 {
        assert!(!self.values.is_empty());
        let n = self.values.len();
        let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.values[idx]
    }

    /// `(r, P(X >= r))` at every distinct sample value.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let n = self.values.len() as f64;
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.values.len() {
            let v = self.values[i];
            out.push((v, (self.values.len() - i) as f64 / n));
            while i < self.values.len() && self.values[i] == v {
                i += 1;
            }
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "r,ccdf")?;
        for (r, p) in self.steps() {
            writeln!(w, "{r:.17e},{p:.17e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_one_and_steps_down() {
        let c = Ccdf::from_counts(&[3, 1, 1, 7, 2]);
        assert_eq!(c.eval(0.0), 1.0);
        assert_eq!(c.eval(1.0), 1.0);
        assert_eq!(c.eval(1.5), 0.6);
        assert_eq!(c.eval(7.0), 0.2);
        assert_eq!(c.eval(7.5), 0.0);
        assert_eq!(c.steps(), vec![(1.0, 1.0), (2.0, 0.6), (3.0, 0.4), (7.0, 0.2)]);
        assert_eq!(c.quantile(0.5), 2.0);
        assert_eq!(c.quantile(1.0), 7.0);
        assert_eq!(c.quantile(0.0), 1.0);
    }
}
