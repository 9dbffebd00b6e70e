//! Seeded synthetic videos: each action is a run of noisy frames around a
//! class prototype, actions follow a Markov chain and every video carries a
//! template caption. Segment boundaries are kept for evaluation only.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::numkit::{sqrt, Matrix};
use crate::translate::FeatureSequence;
use crate::vocab::{ActionVocabulary, TokenId, WordVocabulary};

/// Initial-state and transition structure of the action chain.
#[derive(Debug, Clone, PartialEq)]
pub enum Transitions {
    /// Every class equally likely after every class.
    Uniform,
    /// Uniform over the other classes: no immediate repeats.
    UniformNoRepeat,
    /// Row-stochastic `C × C` matrix.
    Matrix(Matrix),
}

impl Transitions {
    /// Dense row-stochastic form.
    pub fn to_matrix(&self, classes: usize) -> Matrix {
        match self {
            Transitions::Matrix(m) => m.clone(),
            Transitions::Uniform => {
                let mut m = Matrix::zeros(classes, classes);
                m.fill(1.0 / classes as f64);
                m
            }
            Transitions::UniformNoRepeat => {
                let mut m = Matrix::zeros(classes, classes);
                if classes == 1 {
                    m.set(0, 0, 1.0);
                    return m;
                }
                let p = 1.0 / (classes - 1) as f64;
                for i in 0..classes {
                    for j in 0..classes {
                        if i != j {
                            m.set(i, j, p);
                        }
                    }
                }
                m
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub p_min: usize,
    pub p_max: usize,
    pub d_min: usize,
    pub d_max: usize,
    pub noise_sigma: f64,
    pub transitions: Transitions,
    /// Minimum pairwise distance between class prototypes.
    pub separation: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `C = 10`, `D_in = 16`, `p ∈ [2, 5]`, `d ∈ [4, 10]`,
    /// `noise_sigma = separation / 8`, no immediate repeats.
    pub fn desk(seed: u64) -> Self {
        Self {
            num_classes: 10,
            input_dim: 16,
            p_min: 2,
            p_max: 5,
            d_min: 4,
            d_max: 10,
            noise_sigma: 1.0 / 8.0,
            transitions: Transitions::UniformNoRepeat,
            separation: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_classes", self.num_classes),
            ("input_dim", self.input_dim),
            ("p_min", self.p_min),
            ("d_min", self.d_min),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(invalid!("{name} must be at least 1"));
        }
        if self.p_max < self.p_min {
            return Err(invalid!("p_max ({}) is below p_min ({})", self.p_max, self.p_min));
        }
        if self.d_max < self.d_min {
            return Err(invalid!("d_max ({}) is below d_min ({})", self.d_max, self.d_min));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid!("noise_sigma must be finite and non-negative"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(invalid!("separation must be finite and non-negative"));
        }
        if let Transitions::Matrix(m) = &self.transitions {
            let c = self.num_classes;
            if m.shape() != (c, c) {
                return Err(invalid!("transition matrix must be {c} x {c}, got {:?}", m.shape()));
            }
            for (i, row) in m.row_iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(invalid!("transition row {i} is not a probability distribution (sum {sum})"));
                }
            }
        }
        Ok(())
    }
}

/// Frames `[start, end)` showing `class`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub class: TokenId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureSequence,
    pub actions: Vec<TokenId>,
    /// Word ids; empty when unavailable.
    pub caption: Vec<TokenId>,
    /// Evaluation-only segmentation; empty when unavailable.
    pub boundaries: Vec<Segment>,
}

impl Sample {
    /// Checks that the boundaries tile `[0, T)` in order and spell out
    /// `actions`.
    pub fn check_boundaries(&self) -> Result<()> {
        let mut at = 0;
        for s in &self.boundaries {
            if s.start != at || s.end <= s.start {
                return Err(invalid!("segment {s:?} does not continue at frame {at}"));
            }
            at = s.end;
        }
        if at != self.features.len() {
            return Err(invalid!("segments end at {at}, video has {} frames", self.features.len()));
        }
        if !self.boundaries.iter().map(|s| s.class).eq(self.actions.iter().copied()) {
            return Err(invalid!("segment classes disagree with the action sequence"));
        }
        Ok(())
    }
}

const ACTIONS: [(&str, &str); 20] = [
    ("walk", "walks"),
    ("run", "runs"),
    ("jump", "jumps"),
    ("sit", "sits"),
    ("stand", "stands"),
    ("wave", "waves"),
    ("clap", "claps"),
    ("eat", "eats"),
    ("drink", "drinks"),
    ("read", "reads"),
    ("write", "writes"),
    ("push", "pushes"),
    ("pull", "pulls"),
    ("throw", "throws"),
    ("catch", "catches"),
    ("kick", "kicks"),
    ("climb", "climbs"),
    ("dance", "dances"),
    ("sleep", "sleeps"),
    ("cook", "cooks"),
];

fn action_name(c: usize) -> String {
    ACTIONS.get(c).map_or_else(|| format!("action{c}"), |a| String::from(a.0))
}

fn verb(c: usize) -> String {
    ACTIONS.get(c).map_or_else(|| format!("does{c}"), |a| String::from(a.1))
}

pub fn action_vocabulary(num_classes: usize) -> Result<ActionVocabulary> {
    ActionVocabulary::new((0..num_classes).map(action_name))
}

/// `the`, `person`, `then`, then one verb per class.
pub fn word_vocabulary(num_classes: usize) -> Result<WordVocabulary> {
    let fixed = ["the", "person", "then"].map(String::from);
    WordVocabulary::new(fixed.into_iter().chain((0..num_classes).map(verb)))
}

/// Word ids of "the person ⟨verb⟩" clauses joined by "then".
pub fn caption_for(actions: &[TokenId]) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(actions.len() * 4);
    for (k, &a) in actions.iter().enumerate() {
        if k > 0 {
            out.push(2);
        }
        out.extend_from_slice(&[0, 1, 3 + a]);
    }
    out
}

const PROTOTYPE_RETRIES: usize = 1000;

/// Class prototypes, one row each, drawn `N(0, separation²)` per coordinate
/// and rejected until every pair is at least `separation` apart.
pub fn prototypes(spec: &SyntheticSpec) -> Result<Matrix> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    let (c, d) = (spec.num_classes, spec.input_dim);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(c);
    let scale = if spec.separation > 0.0 { spec.separation } else { 1.0 };
    'class: for k in 0..c {
        for _ in 0..PROTOTYPE_RETRIES {
            let cand: Vec<f64> = (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let far = rows.iter().all(|r| {
                let sq: f64 = r.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
                sqrt(sq) >= spec.separation
            });
            if far {
                rows.push(cand);
                continue 'class;
            }
        }
        return Err(Error::Generation(format!(
            "could not place prototype {k} at distance {} from the others after {PROTOTYPE_RETRIES} draws",
            spec.separation
        )));
    }
    Matrix::from_rows(&rows)
}

fn draw_from<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left a sliver above the last cumulative sum.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn generate_one(spec: &SyntheticSpec, protos: &Matrix, chain: &Matrix, index: usize) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ index as u64);
    rng.set_stream(1);
    let c = spec.num_classes;
    let p = rng.random_range(spec.p_min..=spec.p_max);
    let mut actions = Vec::with_capacity(p);
    actions.push(rng.random_range(0..c));
    while actions.len() < p {
        let prev = actions[actions.len() - 1];
        actions.push(draw_from(chain.row(prev), &mut rng));
    }
    let mut rows = Vec::new();
    let mut boundaries = Vec::with_capacity(p);
    for &a in &actions {
        let d = rng.random_range(spec.d_min..=spec.d_max);
        boundaries.push(Segment { start: rows.len(), end: rows.len() + d, class: a });
        for _ in 0..d {
            let frame: Vec<f64> = protos
                .row(a)
                .iter()
                .map(|&mu| mu + spec.noise_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            rows.push(frame);
        }
    }
    Ok(Sample {
        features: FeatureSequence::from_rows(format!("s{index:06}"), &rows)?,
        caption: caption_for(&actions),
        actions,
        boundaries,
    })
}

/// `count` samples, fully determined by `spec.seed`. Sample `i` uses its own
/// generator seeded from `seed ⊕ i`.
pub fn generate(spec: &SyntheticSpec, count: usize) -> Result<Vec<Sample>> {
    if count == 0 {
        return Err(invalid!("count must be at least 1"));
    }
    let protos = prototypes(spec)?;
    let chain = spec.transitions.to_matrix(spec.num_classes);
    (0..count).map(|i| generate_one(spec, &protos, &chain, i)).collect()
}

/// Train / validation / test partition of one generated pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Generates `train + val + test` samples and cuts them in that order.
pub fn generate_splits(spec: &SyntheticSpec, train: usize, val: usize, test: usize) -> Result<Splits> {
    let mut all = generate(spec, train + val + test)?;
    let test_part = all.split_off(train + val);
    let val_part = all.split_off(train);
    Ok(Splits { train: all, val: val_part, test: test_part })
}

pub const DESK_SPLIT: (usize, usize, usize) = (2000, 500, 500);

/// Index of the closest prototype row to `frame`.
pub fn nearest_prototype(protos: &Matrix, frame: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (k, row) in protos.row_iter().enumerate() {
        let sq: f64 = row.iter().zip(frame).map(|(a, b)| (a - b) * (a - b)).sum();
        if sq < best.0 {
            best = (sq, k);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn degenerate_spec_gives_prototype_frames() {
        let spec = SyntheticSpec {
            p_max: 1,
            p_min: 1,
            d_min: 1,
            d_max: 1,
            noise_sigma: 0.0,
            ..SyntheticSpec::desk(3)
        };
        let protos = prototypes(&spec).unwrap();
        for s in generate(&spec, 20).unwrap() {
            assert_eq!(s.features.len(), 1);
            assert_eq!(s.actions.len(), 1);
            assert_eq!(s.features.frames.row(0), protos.row(s.actions[0]));
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = SyntheticSpec::desk(7);
        assert_eq!(generate(&spec, 30).unwrap(), generate(&spec, 30).unwrap());
        assert_ne!(generate(&spec, 30).unwrap(), generate(&SyntheticSpec::desk(8), 30).unwrap());
        // A prefix of a larger pool equals the smaller pool.
        assert_eq!(generate(&spec, 50).unwrap()[..30], generate(&spec, 30).unwrap()[..]);
    }

    #[test]
    fn prototypes_respect_separation() {
        let spec = SyntheticSpec { separation: 2.0, ..SyntheticSpec::desk(1) };
        let p = prototypes(&spec).unwrap();
        for i in 0..p.rows() {
            for j in 0..i {
                let sq: f64 = p.row(i).iter().zip(p.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                assert!(sqrt(sq) >= 2.0);
            }
        }
    }

    #[test]
    fn infeasible_separation_is_a_generation_error() {
        let spec = SyntheticSpec { input_dim: 1, num_classes: 10, separation: 50.0, ..SyntheticSpec::desk(1) };
        // One dimension with N(0, 50²) draws cannot hold ten points 50 apart
        // within a thousand tries each.
        assert!(matches!(prototypes(&spec), Err(Error::Generation(_))));
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let spec = SyntheticSpec { p_min: 0, ..SyntheticSpec::desk(1) };
        let msg = alloc::format!("{}", generate(&spec, 1).unwrap_err());
        assert!(msg.contains("p_min"), "{msg}");
        let mut m = Matrix::zeros(10, 10);
        m.fill(0.2);
        let spec = SyntheticSpec { transitions: Transitions::Matrix(m), ..SyntheticSpec::desk(1) };
        assert!(spec.validate().is_err());
        assert!(generate(&SyntheticSpec::desk(1), 0).is_err());
    }

    #[test]
    fn captions_follow_the_grammar() {
        let words = word_vocabulary(10).unwrap();
        let text = words.decode(&caption_for(&[0, 3])).unwrap().join(" ");
        assert_eq!(text, "the person walks then the person sits");
        assert!(caption_for(&[]).is_empty());
        assert_eq!(action_vocabulary(22).unwrap().name(21).unwrap(), "action21");
    }

    #[test]
    fn nearest_prototype_labels_frames() {
        let spec = SyntheticSpec::desk(7);
        let protos = prototypes(&spec).unwrap();
        let (mut right, mut total) = (0usize, 0usize);
        for s in generate(&spec, 300).unwrap() {
            for seg in &s.boundaries {
                for t in seg.start..seg.end {
                    right += usize::from(nearest_prototype(&protos, s.features.frames.row(t)) == seg.class);
                    total += 1;
                }
            }
        }
        assert!(right as f64 >= 0.99 * total as f64);
    }

    #[test]
    fn transition_frequencies_match_the_chain() {
        let mut m = Matrix::zeros(3, 3);
        for (i, row) in [[0.5, 0.3, 0.2], [0.1, 0.1, 0.8], [0.0, 0.6, 0.4]].iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                m.set(i, j, p);
            }
        }
        let spec = SyntheticSpec {
            num_classes: 3,
            input_dim: 2,
            p_min: 2,
            p_max: 2,
            d_min: 1,
            d_max: 1,
            transitions: Transitions::Matrix(m.clone()),
            ..SyntheticSpec::desk(11)
        };
        let mut counts = vec![[0usize; 3]; 3];
        for s in generate(&spec, 100_000).unwrap() {
            counts[s.actions[0]][s.actions[1]] += 1;
        }
        for i in 0..3 {
            let n: usize = counts[i].iter().sum();
            for j in 0..3 {
                let p = m.get(i, j);
                let sigma = sqrt(p * (1.0 - p) / n as f64);
                let freq = counts[i][j] as f64 / n as f64;
                assert!((freq - p).abs() <= 3.0 * sigma + 1e-12, "({i},{j}): {freq} vs {p}");
            }
        }
    }

    #[test]
    fn splits_have_requested_sizes() {
        let s = generate_splits(&SyntheticSpec::desk(2), 20, 5, 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (20, 5, 7));
        assert_eq!(s.val[0].features.id, "s000020");
    }

    #[test]
    fn no_repeat_chain_never_repeats() {
        for s in generate(&SyntheticSpec::desk(4), 200).unwrap() {
            assert!(s.actions.windows(2).all(|w| w[0] != w[1]));
        }
    }

    proptest! {
        #[test]
        fn boundaries_tile_and_match(seed in 0u64..200, count in 1usize..10) {
            for s in generate(&SyntheticSpec::desk(seed), count).unwrap() {
                prop_assert!(s.check_boundaries().is_ok());
                prop_assert!((2..=5).contains(&s.actions.len()));
                prop_assert!(s.boundaries.iter().all(|b| (4..=10).contains(&(b.end - b.start))));
            }
        }
    }
}
