use std::cmp::Ordering;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UpoError};
use crate::models::{BackboneDescriptor, Sequence, END, FIRST_CONTENT};
use crate::objectives::TripleBatch;
use crate::seed;

/// Lengths and term scales of a synthetic world.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldShape {
    pub prompt_len: usize,
    pub response_len: usize,
    pub unigram_scale: f64,
    pub bigram_scale: f64,
    pub cross_scale: f64,
    pub nonlinear_amplitude: f64,
    /// Seed and demonstration responses are drawn from a Markov writer with
    /// `p(t | prev) ~ exp((unigram[t] + bigram[prev, t]) / writer_temperature)`;
    /// `None` draws uniformly.
    pub writer_temperature: Option<f64>,
    /// Writer temperature of the SFT demonstrations; defaults to `writer_temperature`.
    pub demo_temperature: Option<f64>,
}

impl Default for WorldShape {
    fn default() -> Self {
        Self {
            prompt_len: 3,
            response_len: 8,
            unigram_scale: 1.0,
            bigram_scale: 1.0,
            cross_scale: 0.5,
            nonlinear_amplitude: 0.25,
            writer_temperature: Some(0.3),
            demo_temperature: Some(2.0),
        }
    }
}

/// Hidden ground-truth utility over `(prompt, response)` pairs.
///
/// `U*(x, y) = w . feat(x, y) + a sin(w' . feat(x, y))` where the features
/// are normalized unigram counts of `y`, normalized bigram counts over the
/// chain `[x_last] ++ y`, and normalized prompt/response cross pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticWorld {
    seed: u64,
    vocab: usize,
    prompt_len: usize,
    response_len: usize,
    amplitude: f64,
    /// One next-token distribution per previous token.
    writer: Option<Vec<WeightedIndex<f64>>>,
    demo_writer: Option<Vec<WeightedIndex<f64>>>,
    unigram: Vec<f64>,
    bigram: Vec<f64>,
    cross: Vec<f64>,
    wave: Vec<f64>,
}

/// Which of two candidate responses the world prefers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Winner {
    First,
    Second,
}

pub fn make_world(seed: u64, desc: &BackboneDescriptor) -> Result<SyntheticWorld> {
    make_world_with(seed, desc, &WorldShape::default())
}

pub fn make_world_with(seed: u64, desc: &BackboneDescriptor, shape: &WorldShape) -> Result<SyntheticWorld> {
    desc.validate()?;
    let (prompt_len, response_len) = (shape.prompt_len, shape.response_len);
    for (name, v) in [
        ("unigram_scale", shape.unigram_scale),
        ("bigram_scale", shape.bigram_scale),
        ("cross_scale", shape.cross_scale),
        ("nonlinear_amplitude", shape.nonlinear_amplitude),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(UpoError::Config(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    if desc.vocab <= FIRST_CONTENT as usize + 1 {
        return Err(UpoError::Config(format!(
            "world needs at least two content tokens, vocab is {}",
            desc.vocab
        )));
    }
    if prompt_len == 0 || response_len == 0 {
        return Err(UpoError::Config("prompt and response lengths must be >= 1".into()));
    }
    if prompt_len + response_len > desc.context {
        return Err(UpoError::Config(format!(
            "prompt_len {prompt_len} + response_len {response_len} exceeds context {}",
            desc.context
        )));
    }
    let v = desc.vocab;
    let mut rng = seed::rng(seed, "world", &[]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut draw = |n: usize, scale: f64| -> Vec<f64> { (0..n).map(|_| scale * normal.sample(&mut rng)).collect() };
    let unigram = draw(v, shape.unigram_scale);
    let bigram = draw(v * v, shape.bigram_scale);
    let cross = draw(v * v, shape.cross_scale);
    let wave = draw(v * v, std::f64::consts::PI);
    let writer = writer_tables(&unigram, &bigram, v, shape.writer_temperature)?;
    let demo_writer = match shape.demo_temperature {
        Some(_) => writer_tables(&unigram, &bigram, v, shape.demo_temperature)?,
        None => writer.clone(),
    };
    Ok(SyntheticWorld {
        seed,
        vocab: v,
        prompt_len,
        response_len,
        amplitude: shape.nonlinear_amplitude,
        writer,
        demo_writer,
        unigram,
        bigram,
        cross,
        wave,
    })
}

fn writer_tables(
    unigram: &[f64],
    bigram: &[f64],
    v: usize,
    temperature: Option<f64>,
) -> Result<Option<Vec<WeightedIndex<f64>>>> {
    let Some(t) = temperature else {
        return Ok(None);
    };
    if !(t > 0.0 && t.is_finite()) {
        return Err(UpoError::Config(format!(
            "writer temperature must be finite and > 0, got {t}"
        )));
    }
    (0..v)
        .map(|prev| {
            let logits: Vec<f64> = (FIRST_CONTENT as usize..v)
                .map(|tok| (unigram[tok] + bigram[prev * v + tok]) / t)
                .collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            WeightedIndex::new(logits.iter().map(|l| (l - top).exp()))
                .map_err(|e| UpoError::Config(format!("writer weights: {e}")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

impl SyntheticWorld {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn response_len(&self) -> usize {
        self.response_len
    }

    /// `U*(x, y)`.
    pub fn utility(&self, x: &Sequence, y: &Sequence) -> Result<f64> {
        x.check_vocab(self.vocab)?;
        y.check_vocab(self.vocab)?;
        let v = self.vocab;
        let y = &y.tokens;
        let mut lin = 0.0;
        let mut wave = 0.0;
        if !y.is_empty() {
            let n = y.len() as f64;
            lin += y.iter().map(|&t| self.unigram[t as usize]).sum::<f64>() / n;
        }
        let mut chain = Vec::with_capacity(y.len() + 1);
        chain.extend(x.tokens.last().copied());
        chain.extend_from_slice(y);
        if chain.len() >= 2 {
            let n = (chain.len() - 1) as f64;
            for pair in chain.windows(2) {
                let idx = pair[0] as usize * v + pair[1] as usize;
                lin += self.bigram[idx] / n;
                wave += self.wave[idx] / n;
            }
        }
        if !x.is_empty() && !y.is_empty() {
            let n = (x.len() * y.len()) as f64;
            for &a in &x.tokens {
                for &b in y {
                    lin += self.cross[a as usize * v + b as usize] / n;
                }
            }
        }
        Ok(lin + self.amplitude * wave.sin())
    }

    /// Oracle verdict; exact ties go to the lexicographically smaller response.
    pub fn true_preference(&self, x: &Sequence, y1: &Sequence, y2: &Sequence) -> Result<Winner> {
        if y1.tokens == y2.tokens {
            return Err(UpoError::invalid("true_preference needs two distinct responses"));
        }
        let u1 = self.utility(x, y1)?;
        let u2 = self.utility(x, y2)?;
        Ok(match u1.partial_cmp(&u2) {
            Some(Ordering::Greater) => Winner::First,
            Some(Ordering::Less) => Winner::Second,
            _ if y1.tokens < y2.tokens => Winner::First,
            _ => Winner::Second,
        })
    }

    /// Whether the labeled direction of `t` agrees with the oracle.
    pub fn agrees(&self, t: &PreferenceTriple) -> Result<bool> {
        Ok(self.true_preference(&t.x(), &t.y_w(), &t.y_l())? == Winner::First)
    }

    /// `n` prompts of `prompt_len` content tokens.
    pub fn sample_prompts(&self, n: usize, seed: u64, label: &str) -> Vec<Sequence> {
        let mut rng = seed::rng(seed, label, &[]);
        (0..n)
            .map(|_| Sequence::prompt(self.random_content(&mut rng, self.prompt_len)))
            .collect()
    }

    /// Uniform content tokens followed by END; total length in `[2, response_len]`.
    pub fn random_response<R: Rng>(&self, rng: &mut R) -> Sequence {
        let body = self.body_len(rng);
        let mut tokens = self.random_content(rng, body);
        tokens.push(END);
        tokens.truncate(self.response_len);
        Sequence::response(tokens)
    }

    /// A seed-data response to `x` from the writer, shaped like
    /// [`Self::random_response`].
    pub fn writer_response<R: Rng>(&self, x: &Sequence, rng: &mut R) -> Sequence {
        self.markov_response(self.writer.as_deref(), x, rng)
    }

    /// An SFT demonstration for `x`.
    pub fn demo_response<R: Rng>(&self, x: &Sequence, rng: &mut R) -> Sequence {
        self.markov_response(self.demo_writer.as_deref(), x, rng)
    }

    fn markov_response<R: Rng>(&self, writer: Option<&[WeightedIndex<f64>]>, x: &Sequence, rng: &mut R) -> Sequence {
        let Some(writer) = writer else {
            return self.random_response(rng);
        };
        let body = self.body_len(rng);
        let mut prev = x.tokens.last().copied();
        let mut tokens = Vec::with_capacity(body + 1);
        for _ in 0..body {
            let t = match prev {
                Some(p) => FIRST_CONTENT + writer[p as usize].sample(rng) as u32,
                None => rng.random_range(FIRST_CONTENT..self.vocab as u32),
            };
            tokens.push(t);
            prev = Some(t);
        }
        tokens.push(END);
        tokens.truncate(self.response_len);
        Sequence::response(tokens)
    }

    fn body_len<R: Rng>(&self, rng: &mut R) -> usize {
        rng.random_range(1..self.response_len.max(2))
    }

    fn random_content<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<u32> {
        (0..n)
            .map(|_| rng.random_range(FIRST_CONTENT..self.vocab as u32))
            .collect()
    }
}

/// Where a triple came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Seed,
    Generated(usize),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Seed => write!(f, "seed"),
            Provenance::Generated(i) => write!(f, "generated({i})"),
        }
    }
}

impl std::str::FromStr for Provenance {
    type Err = UpoError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "seed" {
            return Ok(Provenance::Seed);
        }
        s.strip_prefix("generated(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|n| n.parse().ok())
            .map(Provenance::Generated)
            .ok_or_else(|| UpoError::invalid(format!("unknown provenance '{s}'")))
    }
}

impl Serialize for Provenance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleLabel {
    Correct,
    Flipped,
}

/// `(x, y_w, y_l)` with bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceTriple {
    pub id: String,
    pub prompt: Vec<u32>,
    pub chosen: Vec<u32>,
    pub rejected: Vec<u32>,
    pub provenance: Provenance,
    pub oracle_label: Option<OracleLabel>,
}

impl PreferenceTriple {
    pub fn new(
        id: impl Into<String>,
        x: &Sequence,
        y_w: &Sequence,
        y_l: &Sequence,
        provenance: Provenance,
    ) -> Result<Self> {
        if y_w.tokens == y_l.tokens {
            return Err(UpoError::invalid("chosen and rejected responses are identical"));
        }
        Ok(Self {
            id: id.into(),
            prompt: x.tokens.clone(),
            chosen: y_w.tokens.clone(),
            rejected: y_l.tokens.clone(),
            provenance,
            oracle_label: None,
        })
    }

    pub fn x(&self) -> Sequence {
        Sequence::prompt(self.prompt.clone())
    }

    pub fn y_w(&self) -> Sequence {
        Sequence::response(self.chosen.clone())
    }

    pub fn y_l(&self) -> Sequence {
        Sequence::response(self.rejected.clone())
    }

    /// Same triple with chosen and rejected exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            chosen: self.rejected.clone(),
            rejected: self.chosen.clone(),
            oracle_label: self.oracle_label.map(|l| match l {
                OracleLabel::Correct => OracleLabel::Flipped,
                OracleLabel::Flipped => OracleLabel::Correct,
            }),
            ..self.clone()
        }
    }

    /// Fills `oracle_label` from the world.
    pub fn with_oracle(mut self, world: &SyntheticWorld) -> Result<Self> {
        self.oracle_label = Some(if world.agrees(&self)? {
            OracleLabel::Correct
        } else {
            OracleLabel::Flipped
        });
        Ok(self)
    }
}

pub fn write_jsonl(path: &Path, triples: &[PreferenceTriple]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| UpoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in triples {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| UpoError::io(path, e))?;
    }
    w.flush().map_err(|e| UpoError::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<PreferenceTriple>> {
    let file = std::fs::File::open(path).map_err(|e| UpoError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| UpoError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// `n` seed triples over writer responses, labeled by the oracle and then
/// flipped independently with probability `eta`.
pub fn label_seed_data(world: &SyntheticWorld, n: usize, eta: f64, seed: u64) -> Result<TripleBatch> {
    if n == 0 {
        return Err(UpoError::invalid("seed data size must be >= 1"));
    }
    if !(0.0..0.5).contains(&eta) {
        return Err(UpoError::invalid(format!("noise rate must lie in [0, 0.5), got {eta}")));
    }
    let mut triples = Vec::with_capacity(n);
    for j in 0..n {
        let mut rng = seed::rng(seed, "seed-data", &[j as u64]);
        let x = Sequence::prompt(world.random_content(&mut rng, world.prompt_len));
        let a = world.writer_response(&x, &mut rng);
        let mut b = world.writer_response(&x, &mut rng);
        let mut attempts = 0;
        while b.tokens == a.tokens {
            attempts += 1;
            b = if attempts < 64 {
                world.writer_response(&x, &mut rng)
            } else {
                world.random_response(&mut rng)
            };
        }
        let (w, l) = match world.true_preference(&x, &a, &b)? {
            Winner::First => (a, b),
            Winner::Second => (b, a),
        };
        let flip = rng.random::<f64>() < eta;
        let mut t = if flip {
            PreferenceTriple::new(format!("seed-{j:05}"), &x, &l, &w, Provenance::Seed)?
        } else {
            PreferenceTriple::new(format!("seed-{j:05}"), &x, &w, &l, Provenance::Seed)?
        };
        t.oracle_label = Some(if flip {
            OracleLabel::Flipped
        } else {
            OracleLabel::Correct
        });
        triples.push(t);
    }
    TripleBatch::new(triples)
}

/// A scored response; `rank` 0 is the highest reward.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardedResponse {
    pub id: String,
    pub response: Sequence,
    pub reward: f64,
    pub rank: usize,
}

/// Sorts by reward descending, ties by id, and assigns ranks.
pub fn rank_responses(items: Vec<(String, Sequence, f64)>) -> Result<Vec<RewardedResponse>> {
    if let Some((id, _, r)) = items.iter().find(|(_, _, r)| !r.is_finite()) {
        return Err(UpoError::NonFinite(format!("reward {r} for response {id}")));
    }
    let mut items = items;
    items.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    Ok(items
        .into_iter()
        .enumerate()
        .map(|(rank, (id, response, reward))| RewardedResponse {
            id,
            response,
            reward,
            rank,
        })
        .collect())
}

/// Output of [`build_pairs`].
#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub triples: Vec<PreferenceTriple>,
    /// All rewards were identical, so the ranking is pure id order.
    pub degenerate: bool,
}

/// Pairs every response ranked above `top_k` with every response at or below
/// it. `top_k == 0` keeps all `N(N-1)/2` pairs.
pub fn build_pairs(
    x: &Sequence,
    responses: &[RewardedResponse],
    top_k: usize,
    provenance: Provenance,
) -> Result<PairSet> {
    let n = responses.len();
    if n < 2 {
        return Err(UpoError::invalid(format!("build_pairs needs >= 2 responses, got {n}")));
    }
    if top_k >= n {
        return Err(UpoError::invalid(format!(
            "top_k must be < number of responses ({n}), got {top_k}"
        )));
    }
    let mut ranked: Vec<&RewardedResponse> = responses.iter().collect();
    ranked.sort_by_key(|r| r.rank);
    if ranked.iter().enumerate().any(|(i, r)| r.rank != i) {
        return Err(UpoError::invalid("ranks are not a permutation of 0..N"));
    }
    let degenerate = ranked.windows(2).all(|w| w[0].reward == w[1].reward);
    let mut triples = Vec::new();
    for (i, w) in ranked.iter().enumerate() {
        let rejected = if top_k == 0 {
            i + 1..n
        } else if i < top_k {
            top_k..n
        } else {
            break;
        };
        for l in &ranked[rejected] {
            if w.response.tokens == l.response.tokens {
                continue;
            }
            triples.push(PreferenceTriple::new(
                format!("{}>{}", w.id, l.id),
                x,
                &w.response,
                &l.response,
                provenance,
            )?);
        }
    }
    Ok(PairSet { triples, degenerate })
}

/// Fraction of triples whose labeled direction the oracle disagrees with.
pub fn noise_rate(triples: &[PreferenceTriple], world: &SyntheticWorld) -> Result<f64> {
    if triples.is_empty() {
        return Err(UpoError::EmptyPool("noise_rate of an empty batch".into()));
    }
    let mut wrong = 0usize;
    for t in triples {
        if !world.agrees(t)? {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / triples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(seed: u64) -> SyntheticWorld {
        make_world(seed, &BackboneDescriptor::default()).unwrap()
    }

    fn probes(n: usize) -> Vec<(Sequence, Sequence)> {
        let w = world(999);
        let mut rng = seed::rng(7, "probe", &[]);
        (0..n)
            .map(|_| {
                (
                    Sequence::prompt(w.random_content(&mut rng, 3)),
                    w.random_response(&mut rng),
                )
            })
            .collect()
    }

    #[test]
    fn world_is_reproducible() {
        let (a, b) = (world(1), world(1));
        for (x, y) in probes(100) {
            assert_eq!(
                a.utility(&x, &y).unwrap().to_bits(),
                b.utility(&x, &y).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn seeds_give_different_worlds() {
        let (a, b) = (world(1), world(2));
        let differs = probes(100)
            .iter()
            .any(|(x, y)| a.utility(x, y).unwrap() != b.utility(x, y).unwrap());
        assert!(differs);
    }

    #[test]
    fn constant_sequence_is_finite() {
        let w = world(3);
        let u = w
            .utility(&Sequence::prompt(vec![5; 3]), &Sequence::response(vec![5; 8]))
            .unwrap();
        assert!(u.is_finite());
        assert_eq!(
            w.utility(&Sequence::prompt(vec![5]), &Sequence::response(vec![]))
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn utility_is_not_constant() {
        let w = world(4);
        let us: Vec<f64> = probes(50).iter().map(|(x, y)| w.utility(x, y).unwrap()).collect();
        assert!(us.iter().any(|u| (u - us[0]).abs() > 1e-6));
    }

    #[test]
    fn preference_is_order_invariant() {
        let w = world(5);
        let ps = probes(200);
        for pair in ps.chunks(2) {
            let (x, y1) = &pair[0];
            let y2 = &pair[1].1;
            if y1 == y2 {
                continue;
            }
            let a = w.true_preference(x, y1, y2).unwrap();
            let b = w.true_preference(x, y2, y1).unwrap();
            assert_ne!(a, b);
            let (win, lose) = if a == Winner::First { (y1, y2) } else { (y2, y1) };
            assert!(w.utility(x, win).unwrap() >= w.utility(x, lose).unwrap());
        }
    }

    #[test]
    fn exact_tie_goes_lexicographic() {
        let mut w = world(6);
        for table in [&mut w.unigram, &mut w.bigram, &mut w.cross, &mut w.wave] {
            table.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Sequence::prompt(vec![4, 5, 6]);
        let y1 = Sequence::response(vec![9, 3]);
        let y2 = Sequence::response(vec![7, 8, 3]);
        assert_eq!(w.true_preference(&x, &y1, &y2).unwrap(), Winner::Second);
        assert_eq!(w.true_preference(&x, &y2, &y1).unwrap(), Winner::First);
        assert!(w.true_preference(&x, &y1, &y1).is_err());
    }

    #[test]
    fn preference_is_balanced() {
        let w = world(8);
        let mut rng = seed::rng(8, "balance", &[]);
        let mut first = 0;
        let mut total = 0;
        while total < 1000 {
            let x = Sequence::prompt(w.random_content(&mut rng, 3));
            let a = w.random_response(&mut rng);
            let b = w.random_response(&mut rng);
            if a == b {
                continue;
            }
            total += 1;
            if w.true_preference(&x, &a, &b).unwrap() == Winner::First {
                first += 1;
            }
        }
        let frac = first as f64 / total as f64;
        assert!((0.45..=0.55).contains(&frac), "{frac}");
    }

    #[test]
    fn seed_labels_without_noise_are_clean() {
        let w = world(9);
        let b = label_seed_data(&w, 500, 0.0, 1).unwrap();
        assert_eq!(noise_rate(&b.triples, &w).unwrap(), 0.0);
        assert!(b.triples.iter().all(|t| t.oracle_label == Some(OracleLabel::Correct)));
        let swapped: Vec<_> = b.triples.iter().map(|t| t.swapped()).collect();
        assert_eq!(noise_rate(&swapped, &w).unwrap(), 1.0);
    }

    #[test]
    fn seed_noise_matches_eta() {
        let w = world(10);
        let b = label_seed_data(&w, 10_000, 0.3, 2).unwrap();
        let flipped = b
            .triples
            .iter()
            .filter(|t| t.oracle_label == Some(OracleLabel::Flipped))
            .count() as f64
            / 1e4;
        assert!((0.28..=0.32).contains(&flipped), "{flipped}");
        let nr = noise_rate(&b.triples, &w).unwrap();
        assert!((nr - 0.3).abs() <= 0.02, "{nr}");
        assert_eq!(b, label_seed_data(&w, 10_000, 0.3, 2).unwrap());
    }

    #[test]
    fn seed_data_rejects_bad_eta() {
        let w = world(11);
        assert!(label_seed_data(&w, 10, 0.5, 0).is_err());
        assert!(label_seed_data(&w, 10, -0.1, 0).is_err());
        assert!(label_seed_data(&w, 0, 0.1, 0).is_err());
    }

    #[test]
    fn noise_rate_counts_disagreements() {
        let w = world(12);
        let b = label_seed_data(&w, 4, 0.0, 3).unwrap();
        let mut ts = b.triples.clone();
        ts[2] = ts[2].swapped();
        assert_eq!(noise_rate(&ts, &w).unwrap(), 0.25);
        assert!(noise_rate(&[], &w).is_err());
    }

    fn rewarded(rewards: &[f64]) -> Vec<RewardedResponse> {
        rank_responses(
            rewards
                .iter()
                .enumerate()
                .map(|(i, &r)| (format!("r{i}"), Sequence::response(vec![4 + i as u32, END]), r))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn pair_counts() {
        let x = Sequence::prompt(vec![4, 5, 6]);
        for (n, k, expected) in [(6, 3, 9), (2, 1, 1), (4, 2, 4), (6, 0, 15), (5, 1, 4)] {
            let rs = rewarded(&(0..n).map(|i| i as f64 * 0.3 - 1.0).collect::<Vec<_>>());
            let set = build_pairs(&x, &rs, k, Provenance::Generated(1)).unwrap();
            assert_eq!(set.triples.len(), expected, "n={n} k={k}");
            assert!(!set.degenerate);
        }
    }

    #[test]
    fn pairs_respect_reward_order() {
        let x = Sequence::prompt(vec![4]);
        let rs = rewarded(&[0.2, -1.0, 3.0, 0.7, 0.1, 2.2]);
        let reward_of = |toks: &[u32]| rs.iter().find(|r| r.response.tokens == toks).unwrap().reward;
        for k in 0..6 {
            for t in build_pairs(&x, &rs, k, Provenance::Seed).unwrap().triples {
                assert!(reward_of(&t.chosen) >= reward_of(&t.rejected));
            }
        }
    }

    #[test]
    fn identical_rewards_are_degenerate() {
        let x = Sequence::prompt(vec![4]);
        let rs = rewarded(&[1.0; 4]);
        assert_eq!(
            rs.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(),
            ["r0", "r1", "r2", "r3"]
        );
        let set = build_pairs(&x, &rs, 2, Provenance::Seed).unwrap();
        assert!(set.degenerate);
        assert_eq!(set.triples[0].id, "r0>r2");
    }

    #[test]
    fn build_pairs_preconditions() {
        let x = Sequence::prompt(vec![4]);
        assert!(build_pairs(&x, &rewarded(&[1.0]), 0, Provenance::Seed).is_err());
        assert!(build_pairs(&x, &rewarded(&[1.0, 2.0]), 2, Provenance::Seed).is_err());
        assert!(rank_responses(vec![("a".into(), Sequence::response(vec![4]), f64::NAN)]).is_err());
    }

    #[test]
    fn provenance_strings() {
        for p in [Provenance::Seed, Provenance::Generated(3)] {
            assert_eq!(p.to_string().parse::<Provenance>().unwrap(), p);
        }
        assert!("generated(x)".parse::<Provenance>().is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let w = world(13);
        let b = label_seed_data(&w, 20, 0.2, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        write_jsonl(&path, &b.triples).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), b.triples);
        let first = std::fs::read_to_string(&path).unwrap();
        let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
        let keys: Vec<&str> = line.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(keys.len(), 6);
        assert_eq!(line["provenance"], "seed");
    }
}
