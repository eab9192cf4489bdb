use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::parallel::{map_indices, Execution};

use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    Tie,
}

/// Annotations of one response, at most three.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub id: String,
    pub choices: Vec<Choice>,
}

impl Response {
    fn ties(&self) -> usize {
        self.choices.iter().filter(|&&c| c == Choice::Tie).count()
    }

    /// Tie unless A or B strictly outvotes both other options.
    fn majority_tie(&self) -> bool {
        let a = self.choices.iter().filter(|&&c| c == Choice::A).count();
        let b = self.choices.iter().filter(|&&c| c == Choice::B).count();
        let t = self.ties();
        !((a > b && a > t) || (b > a && b > t))
    }
}

pub const MAX_ANNOTATIONS: usize = 3;

/// Reads `response_id,annotator,choice` CSV (choice in A/B/Tie, any case),
/// grouping rows by response in first-seen order.
pub fn read_annotations(text: &str) -> Result<Vec<Response>, AnalysisError> {
    #[derive(Deserialize)]
    struct Row {
        response_id: String,
        #[allow(dead_code)]
        annotator: String,
        choice: String,
    }
    let mut order = Vec::new();
    let mut by_id: BTreeMap<String, Vec<Choice>> = BTreeMap::new();
    for (i, r) in csv::Reader::from_reader(text.as_bytes()).deserialize::<Row>().enumerate() {
        let line = i + 2;
        let r = r.map_err(|e| AnalysisError::Format { line, message: e.to_string() })?;
        let c = match r.choice.trim().to_ascii_lowercase().as_str() {
            "a" => Choice::A,
            "b" => Choice::B,
            "tie" => Choice::Tie,
            other => return Err(AnalysisError::Format { line, message: format!("unknown choice {other:?}") }),
        };
        let e = by_id.entry(r.response_id.clone()).or_insert_with(|| {
            order.push(r.response_id.clone());
            Vec::new()
        });
        if e.len() == MAX_ANNOTATIONS {
            return Err(AnalysisError::Format {
                line,
                message: format!("response {} has more than {MAX_ANNOTATIONS} annotations", r.response_id),
            });
        }
        e.push(c);
    }
    Ok(order.into_iter().map(|id| Response { choices: by_id.remove(&id).unwrap_or_default(), id }).collect())
}

pub fn write_annotations(responses: &[Response]) -> String {
    let mut s = String::from("response_id,annotator,choice\n");
    for r in responses {
        for (k, c) in r.choices.iter().enumerate() {
            let name = match c {
                Choice::A => "A",
                Choice::B => "B",
                Choice::Tie => "Tie",
            };
            s.push_str(&format!("{},{},{}\n", r.id, k, name));
        }
    }
    s
}

/// Responses whose annotations are independently Tie with probability `p_tie`,
/// otherwise A or B with equal odds.
pub fn synthetic_annotations(responses: usize, per_response: usize, p_tie: f64, seed: u64) -> Vec<Response> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..responses)
        .map(|i| Response {
            id: format!("r{i:05}"),
            choices: (0..per_response)
                .map(|_| {
                    if rng.gen_bool(p_tie) {
                        Choice::Tie
                    } else if rng.gen_bool(0.5) {
                        Choice::A
                    } else {
                        Choice::B
                    }
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieCounting {
    /// Ties among all annotations of the drawn responses.
    #[default]
    Pooled,
    /// Share of drawn responses whose majority verdict is a tie.
    MajorityVote,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_sets: usize,
    pub set_size: usize,
    pub seed: u64,
    pub with_replacement: bool,
    pub counting: TieCounting,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_sets: 50_000,
            set_size: 200,
            seed: 0,
            with_replacement: false,
            counting: TieCounting::Pooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieDistribution {
    pub n_sets: usize,
    pub set_size: usize,
    pub seed: u64,
    pub fractions: Vec<f64>,
    pub mean: f64,
    /// Population std over resamples.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Tie fractions over `n_sets` resamples; resample `i` draws from its own
/// ChaCha stream derived from `(seed, i)`.
pub fn bootstrap_ties(
    responses: &[Response],
    cfg: &BootstrapConfig,
    exec: Execution,
) -> Result<TieDistribution, AnalysisError> {
    let n = responses.len();
    if cfg.set_size == 0 || cfg.n_sets == 0 {
        return Err(AnalysisError::Input("set_size and n_sets must be positive".into()));
    }
    if !cfg.with_replacement && cfg.set_size > n {
        return Err(AnalysisError::Input(format!("set size {} exceeds {} responses", cfg.set_size, n)));
    }
    if n == 0 {
        return Err(AnalysisError::Input("no responses".into()));
    }
    let ties: Vec<usize> = responses.iter().map(Response::ties).collect();
    let counts: Vec<usize> = responses.iter().map(|r| r.choices.len()).collect();
    let majority: Vec<bool> = responses.iter().map(Response::majority_tie).collect();
    let fractions = map_indices(exec, cfg.n_sets, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let picks: Vec<usize> = if cfg.with_replacement {
            (0..cfg.set_size).map(|_| rng.gen_range(0..n)).collect()
        } else {
            sample(&mut rng, n, cfg.set_size).into_vec()
        };
        match cfg.counting {
            TieCounting::Pooled => {
                let (t, c) = picks.iter().fold((0, 0), |(t, c), &j| (t + ties[j], c + counts[j]));
                if c == 0 {
                    0.0
                } else {
                    t as f64 / c as f64
                }
            }
            TieCounting::MajorityVote => picks.iter().filter(|&&j| majority[j]).count() as f64 / picks.len() as f64,
        }
    });
    let k = fractions.len() as f64;
    // shifted by the first value so a constant distribution has exactly zero spread
    let f0 = fractions[0];
    let mean = f0 + fractions.iter().map(|f| f - f0).sum::<f64>() / k;
    let std = (fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / k).sqrt();
    let min = fractions.iter().copied().fold(f64::INFINITY, f64::min);
    let max = fractions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(TieDistribution { n_sets: cfg.n_sets, set_size: cfg.set_size, seed: cfg.seed, fractions, mean, std, min, max })
}

impl TieDistribution {
    /// `bins` equal-width bins over [0, 1]; 1.0 lands in the last bin.
    pub fn histogram(&self, bins: usize) -> Vec<(f64, f64, usize)> {
        let bins = bins.max(1);
        let mut counts = vec![0; bins];
        for &f in &self.fractions {
            counts[((f * bins as f64) as usize).min(bins - 1)] += 1;
        }
        counts.into_iter().enumerate().map(|(i, c)| (i as f64 / bins as f64, (i + 1) as f64 / bins as f64, c)).collect()
    }

    pub fn histogram_csv(&self, bins: usize) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (lo, hi, c) in self.histogram(bins) {
            s.push_str(&format!("{lo:.4},{hi:.4},{c}\n"));
        }
        s
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
            "max": self.max,
            "n_sets": self.n_sets,
            "set_size": self.set_size,
            "seed": self.seed,
        }))
        .expect("summary serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ties() {
        let r: Vec<Response> = (0..10).map(|i| Response { id: i.to_string(), choices: vec![Choice::Tie; 3] }).collect();
        let d =
            bootstrap_ties(&r, &BootstrapConfig { n_sets: 50, set_size: 4, ..Default::default() }, Execution::Parallel)
                .unwrap();
        assert_eq!((d.mean, d.std), (1.0, 0.0));
        assert_eq!(d.fractions.len(), 50);
    }

    #[test]
    fn full_population_draw_is_constant() {
        let r = synthetic_annotations(30, 3, 0.4, 1);
        let d = bootstrap_ties(
            &r,
            &BootstrapConfig { n_sets: 20, set_size: 30, ..Default::default() },
            Execution::Parallel,
        )
        .unwrap();
        assert!(d.fractions.iter().all(|&f| f == d.fractions[0]));
        assert_eq!(d.std, 0.0);
    }

    #[test]
    fn oversized_set_is_an_error() {
        let r = synthetic_annotations(5, 3, 0.4, 1);
        assert!(bootstrap_ties(
            &r,
            &BootstrapConfig { n_sets: 1, set_size: 6, ..Default::default() },
            Execution::Sequential
        )
        .is_err());
        let cfg = BootstrapConfig { n_sets: 3, set_size: 6, with_replacement: true, ..Default::default() };
        assert!(bootstrap_ties(&r, &cfg, Execution::Sequential).is_ok());
    }

    #[test]
    fn modes_agree_across_threads() {
        let r = synthetic_annotations(100, 3, 0.35, 2);
        for counting in [TieCounting::Pooled, TieCounting::MajorityVote] {
            let cfg = BootstrapConfig { n_sets: 200, set_size: 20, seed: 5, counting, ..Default::default() };
            let a = bootstrap_ties(&r, &cfg, Execution::Sequential).unwrap();
            let b = bootstrap_ties(&r, &cfg, Execution::Parallel).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn annotation_csv_round_trip_and_limits() {
        let r = synthetic_annotations(4, 3, 0.5, 3);
        assert_eq!(read_annotations(&write_annotations(&r)).unwrap(), r);
        let four = "response_id,annotator,choice\nx,0,A\nx,1,b\nx,2,TIE\nx,3,A\n";
        assert!(matches!(read_annotations(four), Err(AnalysisError::Format { line: 5, .. })));
        assert!(read_annotations("response_id,annotator,choice\nx,0,maybe\n").is_err());
    }

    #[test]
    fn majority_rule() {
        let r = |c: Vec<Choice>| Response { id: String::new(), choices: c }.majority_tie();
        assert!(!r(vec![Choice::A, Choice::A, Choice::Tie]));
        assert!(r(vec![Choice::A, Choice::B, Choice::Tie]));
        assert!(r(vec![Choice::Tie, Choice::Tie, Choice::B]));
        assert!(r(vec![]));
    }

    #[test]
    fn histogram_counts_everything() {
        let d = TieDistribution {
            n_sets: 3,
            set_size: 1,
            seed: 0,
            fractions: vec![0.0, 0.5, 1.0],
            mean: 0.5,
            std: 0.0,
            min: 0.0,
            max: 1.0,
        };
        let h = d.histogram(4);
        assert_eq!(h.iter().map(|b| b.2).collect::<Vec<_>>(), [1, 0, 1, 1]);
    }
}
