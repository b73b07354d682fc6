use crate::error::{Error, Result};

/// Smallest sample accepted by [`EmpiricalLaw::new`].
pub const MIN_LAW_SIZE: usize = 100;

/// Sorted Monte Carlo sample of a scalar statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalLaw {
    values: Vec<f64>,
    pub seed_provenance: String,
}

impl EmpiricalLaw {
    pub fn new(mut values: Vec<f64>, seed_provenance: impl Into<String>) -> Result<Self> {
        if values.len() < MIN_LAW_SIZE {
            return Err(Error::TooFewValues {
                needed: MIN_LAW_SIZE,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        values.sort_by(f64::total_cmp);
        Ok(Self {
            values,
            seed_provenance: seed_provenance.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `F(x) = #{v ≤ x} / M`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.values.partition_point(|&v| v <= x) as f64 / self.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (self.len() - 1) as f64
    }

    /// Order statistic `x_(k)` with `k = ceil(q M)`, clamped to `1..=M`.
    pub fn quantile(&self, q: f64) -> f64 {
        let m = self.len();
        let k = ((q * m as f64).ceil() as usize).clamp(1, m);
        self.values[k - 1]
    }
}

/// Exact `sup_x |F_a(x) − F_b(x)|` over the merged jump points.
pub fn kolmogorov_distance(a: &EmpiricalLaw, b: &EmpiricalLaw) -> f64 {
    let (xa, xb) = (a.values(), b.values());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0_f64;
    while i < xa.len() || j < xb.len() {
        let x = match (xa.get(i), xb.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// `sup_x |F_a(x) − F(x)|` against a continuous reference CDF.
pub fn kolmogorov_distance_to_cdf(a: &EmpiricalLaw, cdf: impl Fn(f64) -> f64) -> f64 {
    let xs = a.values();
    let m = xs.len() as f64;
    let mut d = 0.0_f64;
    let mut i = 0;
    while i < xs.len() {
        let x = xs[i];
        let before = i as f64 / m;
        while i < xs.len() && xs[i] == x {
            i += 1;
        }
        let after = i as f64 / m;
        let f = cdf(x);
        d = d.max((after - f).abs()).max((f - before).abs());
    }
    d
}

/// Standard normal CDF.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Dvoretzky–Kiefer–Wolfowitz radius `√(ln(2/α) / (2M))`.
pub fn dkw_radius(m: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * m as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn law(values: Vec<f64>) -> EmpiricalLaw {
        EmpiricalLaw::new(values, "test").unwrap()
    }

    #[test]
    fn self_distance_zero() {
        let a = law((0..200).map(|i| (i % 17) as f64).collect());
        assert_eq!(kolmogorov_distance(&a, &a), 0.0);
    }

    #[test]
    fn disjoint_point_masses() {
        let a = law(vec![0.0; 100]);
        let b = law(vec![1.0; 100]);
        assert_eq!(kolmogorov_distance(&a, &b), 1.0);
    }

    #[test]
    fn normal_draws_against_analytic_cdf() {
        let mut rng = seed::rng(2024);
        let m = 100_000;
        let a = law((0..m).map(|_| rng.sample(StandardNormal)).collect());
        let d = kolmogorov_distance_to_cdf(&a, standard_normal_cdf);
        assert!(d <= dkw_radius(m, 0.01), "{d}");
        assert!(dkw_radius(m, 0.01) < 0.0052);
    }

    #[test]
    fn too_small_rejected() {
        assert!(matches!(
            EmpiricalLaw::new(vec![1.0; 5], ""),
            Err(Error::TooFewValues { .. })
        ));
        assert!(matches!(
            EmpiricalLaw::new(vec![f64::NAN; 100], ""),
            Err(Error::NonFinite)
        ));
    }

    #[test]
    fn normal_cdf_values() {
        assert!((standard_normal_cdf(0.0) - 0.5).abs() < 1e-15);
        let d = standard_normal_cdf(1.959963984540054) - 0.975;
        assert!(d.abs() < 1e-11, "{d:e}");
    }

    #[test]
    fn brute_force_agrees() {
        let a = law((0..150).map(|i| ((i * 37) % 101) as f64 / 7.0).collect());
        let b = law((0..120).map(|i| ((i * 13) % 89) as f64 / 5.0).collect());
        let mut brute = 0.0_f64;
        for &x in a.values().iter().chain(b.values()) {
            brute = brute.max((a.cdf(x) - b.cdf(x)).abs());
        }
        assert_eq!(kolmogorov_distance(&a, &b), brute);
    }

    proptest! {
        #[test]
        fn ks_is_a_metric(
            xs in proptest::collection::vec(-5.0f64..5.0, 100..160),
            ys in proptest::collection::vec(-5.0f64..5.0, 100..160),
            zs in proptest::collection::vec(-5.0f64..5.0, 100..160),
        ) {
            let (a, b, c) = (law(xs), law(ys), law(zs));
            let ab = kolmogorov_distance(&a, &b);
            prop_assert_eq!(ab, kolmogorov_distance(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!(ab <= kolmogorov_distance(&a, &c) + kolmogorov_distance(&c, &b) + 1e-12);
        }
    }
}
