//! KL/JSD machinery and the discriminator identities the verification
//! suites audit.
//!
//! All divergences are in nats. The convention `0·log 0 = 0` is applied
//! termwise; an impossible KL (absolute-continuity failure) returns the
//! explicit `f64::INFINITY` sentinel rather than overflowing silently.

use crate::error::{Error, Result};

const LN_2: f64 = std::f64::consts::LN_2;

/// Normalized categorical distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Validates non-negativity and normalization to 1 ± 1e-12.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Contract("empty categorical support".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Contract(format!(
                "negative or NaN probability in {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Categorical { probs })
    }

    /// Normalize arbitrary non-negative weights.
    pub fn normalized(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Contract("weights must be non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Contract("weights sum to zero".into()));
        }
        Ok(Categorical {
            probs: weights.iter().map(|w| w / sum).collect(),
        })
    }

    pub fn point_mass(index: usize, support: usize) -> Self {
        let mut probs = vec![0.0; support];
        probs[index] = 1.0;
        Categorical { probs }
    }

    pub fn uniform(support: usize) -> Self {
        Categorical {
            probs: vec![1.0 / support as f64; support],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> usize {
        self.probs.len()
    }
}

fn check_support(a: &Categorical, b: &Categorical) -> Result<()> {
    if a.support() != b.support() {
        return Err(Error::Shape(format!(
            "support mismatch: {} vs {}",
            a.support(),
            b.support()
        )));
    }
    Ok(())
}

/// `KL(p ‖ q) = Σ p_i log(p_i/q_i)`; `+∞` if `p` puts mass where `q` has none.
pub fn kl(p: &Categorical, q: &Categorical) -> Result<f64> {
    check_support(p, q)?;
    let mut total = 0.0;
    for (&pi, &qi) in p.probs().iter().zip(q.probs()) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total)
}

/// Generalized Jensen-Shannon divergence over k ≥ 2 distributions with
/// uniform mixture weights: `(1/k) Σ KL(P_i ‖ M)`, `M` the mean. Always
/// finite, bounded by `log k`.
pub fn jsd(dists: &[Categorical]) -> Result<f64> {
    let k = dists.len();
    if k < 2 {
        return Err(Error::Contract(format!("jsd needs k >= 2, got {k}")));
    }
    let support = dists[0].support();
    for d in dists {
        check_support(&dists[0], d)?;
    }
    let mut mixture = vec![0.0; support];
    for d in dists {
        for (m, &p) in mixture.iter_mut().zip(d.probs()) {
            *m += p / k as f64;
        }
    }
    let mut total = 0.0;
    for d in dists {
        for (&pi, &mi) in d.probs().iter().zip(&mixture) {
            if pi > 0.0 {
                total += pi * (pi / mi).ln() / k as f64;
            }
        }
    }
    Ok(total)
}

/// Triangle-inequality residual for the JSD metric:
/// `√JSD(p,q) + √JSD(q,r) − √JSD(p,r)`. Non-negative up to float noise.
pub fn jsd_metric_gap(p: &Categorical, q: &Categorical, r: &Categorical) -> Result<f64> {
    let pq = jsd(&[p.clone(), q.clone()])?;
    let qr = jsd(&[q.clone(), r.clone()])?;
    let pr = jsd(&[p.clone(), r.clone()])?;
    Ok(pq.max(0.0).sqrt() + qr.max(0.0).sqrt() - pr.max(0.0).sqrt())
}

/// Mutual information `I(X; Z)` of the mixture `X ~ P_Z` with a uniform
/// indicator `Z`, computed by direct enumeration of the joint. Equals
/// `jsd(components)` (up to 1e-10), but takes the independent joint route.
pub fn mixture_mutual_information(components: &[Categorical]) -> Result<f64> {
    let k = components.len();
    if k < 2 {
        return Err(Error::Contract(format!(
            "mixture MI needs k >= 2 components, got {k}"
        )));
    }
    let support = components[0].support();
    for c in components {
        check_support(&components[0], c)?;
    }
    // joint p(z, x) = (1/k) P_z(x); marginals p(z) = 1/k, p(x) = mixture.
    let pz = 1.0 / k as f64;
    let mut px = vec![0.0; support];
    for c in components {
        for (m, &p) in px.iter_mut().zip(c.probs()) {
            *m += pz * p;
        }
    }
    let mut mi = 0.0;
    for c in components {
        for (&pxz, &pxm) in c.probs().iter().zip(&px) {
            let joint = pz * pxz;
            if joint > 0.0 {
                mi += joint * (joint / (pz * pxm)).ln();
            }
        }
    }
    Ok(mi)
}

/// Value of the symmetric two-sample discriminator loss
/// `½ E_p log D + ½ E_p̃ log(1−D)` at the optimum `D*(a) = p(a)/(p(a)+p̃(a))`.
/// Equals `JSD(p, p̃) − log 2`; evaluated directly so the identity can be
/// audited against [`jsd`].
pub fn optimal_discriminator_loss(p: &Categorical, p_tilde: &Categorical) -> Result<f64> {
    check_support(p, p_tilde)?;
    let mut total = 0.0;
    for (&a, &b) in p.probs().iter().zip(p_tilde.probs()) {
        let denom = a + b;
        if denom == 0.0 {
            continue;
        }
        if a > 0.0 {
            total += 0.5 * a * (a / denom).ln();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / denom).ln();
        }
    }
    Ok(total)
}

/// Pair-conditioned discriminator distance
/// `max_D E_p log D + E_p̃ log(1−D) + log 2`, evaluated at the optimum.
/// Closed form `2·JSD(p, p̃) − log 2`, so the range is `[−log 2, log 2]`.
pub fn pair_discriminator_distance(p: &Categorical, p_tilde: &Categorical) -> Result<f64> {
    check_support(p, p_tilde)?;
    let mut total = 0.0;
    for (&a, &b) in p.probs().iter().zip(p_tilde.probs()) {
        let denom = a + b;
        if denom == 0.0 {
            continue;
        }
        if a > 0.0 {
            total += a * (a / denom).ln();
        }
        if b > 0.0 {
            total += b * (b / denom).ln();
        }
    }
    Ok(total + LN_2)
}

/// JSD between a true and a translated per-coupled-set distribution,
/// recovered from the pair-conditioned discriminator distance:
/// `(distance + log 2) / 2`.
pub fn jsd_from_pair_distance(p: &Categorical, p_tilde: &Categorical) -> Result<f64> {
    Ok((pair_discriminator_distance(p, p_tilde)? + LN_2) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_categorical(rng: &mut Rng, support: usize) -> Categorical {
        let w: Vec<f64> = (0..support).map(|_| rng.uniform() + 1e-6).collect();
        Categorical::normalized(&w).unwrap()
    }

    #[test]
    fn kl_identity_is_zero() {
        let p = Categorical::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(kl(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_closed_form_log2() {
        let p = Categorical::new(vec![1.0, 0.0]).unwrap();
        let q = Categorical::new(vec![0.5, 0.5]).unwrap();
        assert!((kl(&p, &q).unwrap() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn kl_absolute_continuity_failure() {
        let p = Categorical::new(vec![1.0, 0.0]).unwrap();
        let q = Categorical::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(kl(&p, &q).unwrap(), f64::INFINITY);
    }

    #[test]
    fn kl_support_mismatch() {
        let p = Categorical::new(vec![1.0]).unwrap();
        let q = Categorical::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(kl(&p, &q), Err(Error::Shape(_))));
    }

    #[test]
    fn jsd_of_equal_inputs_is_zero() {
        let p = Categorical::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert!(jsd(&[p.clone(), p.clone(), p]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn jsd_disjoint_point_masses() {
        let p = Categorical::point_mass(0, 2);
        let q = Categorical::point_mass(1, 2);
        assert!((jsd(&[p, q]).unwrap() - LN_2).abs() < 1e-15);
        let ds: Vec<Categorical> = (0..4).map(|i| Categorical::point_mass(i, 4)).collect();
        assert!((jsd(&ds).unwrap() - (4.0f64).ln()).abs() < 1e-14);
    }

    #[test]
    fn jsd_needs_two_inputs() {
        let p = Categorical::uniform(2);
        assert!(matches!(jsd(&[p]), Err(Error::Contract(_))));
    }

    #[test]
    fn metric_gap_degenerate_cases() {
        let p = Categorical::new(vec![0.4, 0.6]).unwrap();
        let r = Categorical::new(vec![0.9, 0.1]).unwrap();
        assert!(jsd_metric_gap(&p, &p, &p).unwrap().abs() < 1e-15);
        // p = q != r: first term vanishes, the other two cancel.
        assert!(jsd_metric_gap(&p, &p, &r).unwrap().abs() < 1e-15);
    }

    #[test]
    fn metric_gap_random_triples() {
        let mut rng = Rng::new(7);
        for _ in 0..1000 {
            let s = 2 + rng.below(5);
            let p = random_categorical(&mut rng, s);
            let q = random_categorical(&mut rng, s);
            let r = random_categorical(&mut rng, s);
            assert!(jsd_metric_gap(&p, &q, &r).unwrap() >= -1e-9);
        }
    }

    #[test]
    fn mixture_mi_trivial_cases() {
        let p = Categorical::new(vec![0.5, 0.5]).unwrap();
        assert!(mixture_mutual_information(&[p.clone(), p]).unwrap().abs() < 1e-15);
        let a = Categorical::point_mass(0, 3);
        let b = Categorical::point_mass(1, 3);
        let c = Categorical::point_mass(2, 3);
        assert!(
            (mixture_mutual_information(&[a, b, c]).unwrap() - (3.0f64).ln()).abs() < 1e-14
        );
    }

    #[test]
    fn mixture_mi_equals_jsd() {
        let mut rng = Rng::new(21);
        for _ in 0..500 {
            let k = 2 + rng.below(4);
            let s = 2 + rng.below(6);
            let comps: Vec<Categorical> =
                (0..k).map(|_| random_categorical(&mut rng, s)).collect();
            let mi = mixture_mutual_information(&comps).unwrap();
            let js = jsd(&comps).unwrap();
            assert!((mi - js).abs() < 1e-10, "mi {mi} vs jsd {js}");
        }
    }

    #[test]
    fn discriminator_loss_identity_cases() {
        let p = Categorical::new(vec![0.5, 0.5]).unwrap();
        assert!((optimal_discriminator_loss(&p, &p).unwrap() + LN_2).abs() < 1e-15);
        let a = Categorical::point_mass(0, 2);
        let b = Categorical::point_mass(1, 2);
        assert!(optimal_discriminator_loss(&a, &b).unwrap().abs() < 1e-15);
    }

    #[test]
    fn discriminator_loss_equals_jsd_minus_log2() {
        let mut rng = Rng::new(33);
        for _ in 0..500 {
            let s = 2 + rng.below(5);
            let p = random_categorical(&mut rng, s);
            let q = random_categorical(&mut rng, s);
            let lhs = optimal_discriminator_loss(&p, &q).unwrap();
            let rhs = jsd(&[p, q]).unwrap() - LN_2;
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    /// Grid/ternary-search oracle: maximize the discriminator objective
    /// coordinatewise over D in (0,1)^n. The objective is concave in each
    /// coordinate, so ternary search converges.
    fn maximize_discriminator(
        p: &Categorical,
        q: &Categorical,
        halves: bool,
    ) -> f64 {
        let weight = if halves { 0.5 } else { 1.0 };
        let mut total = 0.0;
        for (&a, &b) in p.probs().iter().zip(q.probs()) {
            if a + b == 0.0 {
                continue;
            }
            let f = |d: f64| {
                let mut v = 0.0;
                if a > 0.0 {
                    v += weight * a * d.ln();
                }
                if b > 0.0 {
                    v += weight * b * (1.0 - d).ln();
                }
                v
            };
            let (mut lo, mut hi) = (1e-12, 1.0 - 1e-12);
            for _ in 0..200 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if f(m1) < f(m2) {
                    lo = m1;
                } else {
                    hi = m2;
                }
            }
            total += f(0.5 * (lo + hi));
        }
        total
    }

    #[test]
    fn discriminator_loss_matches_search_oracle() {
        let mut rng = Rng::new(55);
        for _ in 0..50 {
            let s = 2 + rng.below(4);
            let p = random_categorical(&mut rng, s);
            let q = random_categorical(&mut rng, s);
            let closed = optimal_discriminator_loss(&p, &q).unwrap();
            let searched = maximize_discriminator(&p, &q, true);
            assert!((closed - searched).abs() < 1e-6);
        }
    }

    #[test]
    fn pair_distance_identity_cases() {
        let p = Categorical::new(vec![0.3, 0.7]).unwrap();
        assert!((pair_discriminator_distance(&p, &p).unwrap() + LN_2).abs() < 1e-15);
        let a = Categorical::point_mass(0, 2);
        let b = Categorical::point_mass(1, 2);
        assert!((pair_discriminator_distance(&a, &b).unwrap() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn pair_distance_matches_search_oracle_and_closed_form() {
        let mut rng = Rng::new(77);
        for _ in 0..50 {
            let s = 2 + rng.below(4);
            let p = random_categorical(&mut rng, s);
            let q = random_categorical(&mut rng, s);
            let direct = pair_discriminator_distance(&p, &q).unwrap();
            let searched = maximize_discriminator(&p, &q, false) + LN_2;
            let closed = 2.0 * jsd(&[p, q]).unwrap() - LN_2;
            assert!((direct - searched).abs() < 1e-6);
            assert!((direct - closed).abs() < 1e-10);
        }
    }

    #[test]
    fn kl_nonnegative_zero_iff_equal() {
        let mut rng = Rng::new(88);
        for _ in 0..200 {
            let s = 2 + rng.below(5);
            let p = random_categorical(&mut rng, s);
            let q = random_categorical(&mut rng, s);
            let d = kl(&p, &q).unwrap();
            assert!(d >= 0.0);
            if d < 1e-12 {
                for (&a, &b) in p.probs().iter().zip(q.probs()) {
                    assert!((a - b).abs() < 1e-5);
                }
            }
        }
    }
}
