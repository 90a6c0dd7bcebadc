//! Small exact combinatorics shared by the counting code and the analysis formulas.

/// `C(n, k)` as a float, via the multiplicative formula.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, t| acc * (n - t) as f64 / (t + 1) as f64)
}

/// `ln C(n, k)`; `-inf` when `k > n`.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    (0..k)
        .map(|t| ((n - t) as f64).ln() - ((t + 1) as f64).ln())
        .sum()
}

pub fn factorial(k: usize) -> f64 {
    (2..=k).fold(1.0, |acc, t| acc * t as f64)
}

pub fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|t| (t as f64).ln()).sum()
}

/// Iterator over the `k`-subsets of `0..m` in colexicographic order.
///
/// Colex order compares subsets by their largest element first, so
/// `{0,1} < {0,2} < {1,2} < {0,3} < ...`.
#[derive(Debug, Clone)]
pub struct ColexSubsets {
    m: usize,
    current: Vec<usize>,
    done: bool,
}

impl ColexSubsets {
    pub fn new(m: usize, k: usize) -> Self {
        ColexSubsets {
            m,
            current: (0..k).collect(),
            done: k > m,
        }
    }
}

impl Iterator for ColexSubsets {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        let k = self.current.len();
        // Advance: find the smallest position whose element can be bumped
        // without colliding with its successor.
        let mut t = 0;
        loop {
            if t == k {
                self.done = true;
                break;
            }
            let limit = if t + 1 < k { self.current[t + 1] } else { self.m };
            if self.current[t] + 1 < limit {
                self.current[t] += 1;
                for (s, slot) in self.current.iter_mut().enumerate().take(t) {
                    *slot = s;
                }
                break;
            }
            t += 1;
        }
        Some(out)
    }
}

/// Set partitions of `{0, .., k-1}` with their Möbius coefficients.
///
/// For a partition `P`, the coefficient is `∏_{B ∈ P} (-1)^{|B|-1} (|B|-1)!`.
/// Summing `coef(P) · ∏_B S_B` over all partitions turns unrestricted power
/// sums `S_B` into a sum over injective assignments.
#[derive(Debug, Clone)]
pub struct SetPartitions {
    k: usize,
    /// Each entry is (coefficient, block masks over the `k` positions).
    terms: Vec<(f64, Vec<u32>)>,
}

impl SetPartitions {
    pub fn new(k: usize) -> Self {
        assert!(k <= 16, "set partitions limited to k <= 16");
        let mut terms = Vec::new();
        // restricted growth strings: block[t] <= 1 + max(block[..t])
        let mut rgs = vec![0usize; k];
        loop {
            let blocks = rgs.iter().copied().max().map_or(0, |b| b + 1);
            let mut masks = vec![0u32; blocks];
            for (pos, &b) in rgs.iter().enumerate() {
                masks[b] |= 1 << pos;
            }
            let coef = masks
                .iter()
                .map(|mask| {
                    let size = mask.count_ones() as usize;
                    let sign = if size % 2 == 1 { 1.0 } else { -1.0 };
                    sign * factorial(size - 1)
                })
                .product();
            terms.push((coef, masks));

            // next restricted growth string
            let mut t = k;
            loop {
                if t <= 1 {
                    return SetPartitions { k, terms };
                }
                t -= 1;
                let prefix_max = rgs[..t].iter().copied().max().unwrap_or(0);
                if rgs[t] <= prefix_max {
                    rgs[t] += 1;
                    for slot in rgs.iter_mut().skip(t + 1) {
                        *slot = 0;
                    }
                    break;
                }
            }
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[(f64, Vec<u32>)] {
        &self.terms
    }

    /// `Σ_P coef(P) ∏_{B∈P} sums[B]`, where `sums` is indexed by block mask.
    pub fn evaluate(&self, sums: &[f64]) -> f64 {
        debug_assert_eq!(sums.len(), 1 << self.k);
        self.terms
            .iter()
            .map(|(coef, blocks)| coef * blocks.iter().map(|&b| sums[b as usize]).product::<f64>())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(3, 5), 0.0);
        assert_eq!(binomial(7, 0), 1.0);
        assert!((ln_binomial(30, 8).exp() - binomial(30, 8)).abs() / binomial(30, 8) < 1e-12);
        assert_eq!(factorial(5), 120.0);
        assert!((ln_factorial(6).exp() - 720.0).abs() < 1e-9);
    }

    #[test]
    fn colex_order_and_count() {
        let subsets: Vec<_> = ColexSubsets::new(4, 2).collect();
        assert_eq!(
            subsets,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![1, 2],
                vec![0, 3],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        assert_eq!(ColexSubsets::new(8, 3).count(), 56);
        assert_eq!(ColexSubsets::new(3, 0).count(), 1);
        assert_eq!(ColexSubsets::new(2, 3).count(), 0);
    }

    #[test]
    fn bell_numbers() {
        let bell = [1, 1, 2, 5, 15, 52, 203];
        for (k, &b) in bell.iter().enumerate().skip(1) {
            assert_eq!(SetPartitions::new(k).len(), b, "k={k}");
        }
    }

    #[test]
    fn mobius_gives_falling_factorial() {
        // With every S_B equal to x, the injective sum is x(x-1)...(x-k+1).
        for k in 1..=5 {
            let parts = SetPartitions::new(k);
            let x = 7.0;
            let sums = vec![x; 1 << k];
            let falling: f64 = (0..k).map(|t| x - t as f64).product();
            assert!((parts.evaluate(&sums) - falling).abs() < 1e-9, "k={k}");
        }
    }
}
