//! Placement of anomalous variants among normal ones, synthetic dataset
//! generation, and histogram data of where anomalies ended up.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::{Activity, EventLogError, Label, LabeledDataset, LabeledVariant, Variant};
use crate::rework::{is_rework, DetectPolicy};
use crate::rng::SeededRng;

/// Attempts per normal variant before giving up on rejection sampling.
pub const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("invalid layout configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Arrange(String),
    #[error(
        "could not draw a variant free of rework after {MAX_REJECTIONS} attempts; \
         try a larger alphabet or shorter variants"
    )]
    RejectionCap,
    #[error(transparent)]
    EventLog(#[from] EventLogError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Normal,
    Uniform,
    Exponential,
}

impl Distribution {
    pub const ALL: [Distribution; 3] = [
        Distribution::Normal,
        Distribution::Uniform,
        Distribution::Exponential,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Distribution::Normal => "normal",
            Distribution::Uniform => "uniform",
            Distribution::Exponential => "exponential",
        }
    }

    /// Stable small integer used when deriving per-distribution seeds.
    pub fn stream_tag(self) -> u64 {
        match self {
            Distribution::Normal => 1,
            Distribution::Uniform => 2,
            Distribution::Exponential => 3,
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Distribution {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(Distribution::Normal),
            "uniform" => Ok(Distribution::Uniform),
            "exponential" => Ok(Distribution::Exponential),
            other => Err(format!("unknown distribution {other:?}")),
        }
    }
}

/// Fractions are relative to the number of normal variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub kind: Distribution,
    pub mean_fraction: f64,
    pub sigma_fraction: f64,
    pub scale_fraction: f64,
    pub seed: u64,
}

impl LayoutSpec {
    pub fn new(kind: Distribution, seed: u64) -> Self {
        LayoutSpec {
            kind,
            mean_fraction: 0.5,
            sigma_fraction: 1.0 / 6.0,
            scale_fraction: 1.0 / 8.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        let bad = |m: String| Err(LayoutError::Config(m));
        match self.kind {
            Distribution::Normal => {
                if !(self.mean_fraction > 0.0 && self.mean_fraction < 1.0) {
                    return bad(format!("mean_fraction {} not in (0,1)", self.mean_fraction));
                }
                if !(self.sigma_fraction > 0.0 && self.sigma_fraction.is_finite()) {
                    return bad(format!("sigma_fraction {} must be > 0", self.sigma_fraction));
                }
            }
            Distribution::Exponential => {
                if !(self.scale_fraction > 0.0 && self.scale_fraction.is_finite()) {
                    return bad(format!("scale_fraction {} must be > 0", self.scale_fraction));
                }
            }
            Distribution::Uniform => {}
        }
        Ok(())
    }
}

/// Draws `k` sorted insertion positions in `[0, n]` using the layout's own seed.
pub fn sample_insertion_indices(
    spec: &LayoutSpec,
    k: usize,
    n: usize,
) -> Result<Vec<usize>, LayoutError> {
    let mut rng = SeededRng::new(spec.seed);
    sample_insertion_indices_with(spec, k, n, &mut rng)
}

/// Same as [`sample_insertion_indices`] but advancing a caller-owned generator.
pub fn sample_insertion_indices_with(
    spec: &LayoutSpec,
    k: usize,
    n: usize,
    rng: &mut SeededRng,
) -> Result<Vec<usize>, LayoutError> {
    spec.validate()?;
    if n == 0 {
        return Err(LayoutError::Config("need at least one normal variant".into()));
    }
    let nf = n as f64;
    let clamp = |x: f64| -> usize { x.round().clamp(0.0, nf) as usize };
    let mut out: Vec<usize> = (0..k)
        .map(|_| match spec.kind {
            Distribution::Normal => {
                clamp(rng.normal(spec.mean_fraction * nf, spec.sigma_fraction * nf))
            }
            Distribution::Uniform => rng.below(n as u64 + 1) as usize,
            Distribution::Exponential => clamp(rng.exponential(spec.scale_fraction * nf)),
        })
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Inserts `anomalies[i]` before the normal at position `indices[i]`, in
/// order, then renumbers ids 1..=N in final order.
pub fn arrange_dataset(
    normals: &[LabeledVariant],
    anomalies: &[LabeledVariant],
    indices: &[usize],
    provenance: &str,
) -> Result<LabeledDataset, LayoutError> {
    if indices.len() != anomalies.len() {
        return Err(LayoutError::Arrange(format!(
            "{} insertion indices for {} anomalies",
            indices.len(),
            anomalies.len()
        )));
    }
    if indices.windows(2).any(|w| w[0] > w[1]) {
        return Err(LayoutError::Arrange("insertion indices must be sorted".into()));
    }
    if let Some(bad) = indices.iter().find(|&&i| i > normals.len()) {
        return Err(LayoutError::Arrange(format!(
            "insertion index {bad} outside [0, {}]",
            normals.len()
        )));
    }

    let mut out = Vec::with_capacity(normals.len() + anomalies.len());
    let mut next_anomaly = 0;
    for (pos, normal) in normals.iter().enumerate() {
        while next_anomaly < indices.len() && indices[next_anomaly] == pos {
            out.push(anomalies[next_anomaly].clone());
            next_anomaly += 1;
        }
        out.push(normal.clone());
    }
    out.extend(anomalies[next_anomaly..].iter().cloned());

    for (i, lv) in out.iter_mut().enumerate() {
        lv.id = i as u64 + 1;
    }
    Ok(LabeledDataset::new(out, provenance)?)
}

/// `A`, `B`, ..., `Z`, `AA`, `AB`, ... (spreadsheet column style).
fn letter_name(mut i: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'A' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}

pub fn activity_alphabet(size: usize) -> Vec<Activity> {
    (0..size)
        .map(|i| Activity::new(format!("Activity {}", letter_name(i))).expect("valid name"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub alphabet_size: usize,
    pub len_range: (usize, usize),
    pub policy: DetectPolicy,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_normal: 689,
            n_anomalous: 71,
            alphabet_size: 26,
            len_range: (4, 12),
            policy: DetectPolicy::tandem(1),
            seed: 0,
        }
    }
}

/// Draws a random sequence of length `len` with no finding under `policy`.
fn draw_clean(
    rng: &mut SeededRng,
    alphabet: &[Activity],
    len: usize,
    policy: DetectPolicy,
) -> Result<Vec<Activity>, LayoutError> {
    for _ in 0..MAX_REJECTIONS {
        let acts: Vec<Activity> = (0..len)
            .map(|_| alphabet[rng.below(alphabet.len() as u64) as usize].clone())
            .collect();
        let v = Variant::new(acts)?;
        if !is_rework(&v, policy) {
            return Ok(v.into());
        }
    }
    Err(LayoutError::RejectionCap)
}

/// Returns `(normals, anomalies)` with distinct sequences. Normals carry ids
/// `1..=n_normal`, anomalies continue from there.
///
/// Normals are rejection-sampled to contain no finding under the policy.
/// Each anomaly starts from such a clean sequence and has a random unit
/// (length `min_unit_len` or one more) copied in place so that it repeats
/// `min_repetitions` times back to back. Anomalies stay within `len_range`.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
) -> Result<(Vec<LabeledVariant>, Vec<LabeledVariant>), LayoutError> {
    let (min_len, max_len) = spec.len_range;
    let policy = spec.policy;
    let unit_min = policy.min_unit_len.max(1);
    let reps = policy.min_repetitions.max(2);
    if spec.alphabet_size < 2 {
        return Err(LayoutError::Config("alphabet_size must be >= 2".into()));
    }
    if min_len < 2 || max_len < min_len {
        return Err(LayoutError::Config(format!(
            "length range ({min_len}, {max_len}) must satisfy max >= min >= 2"
        )));
    }
    if spec.n_anomalous > 0 && max_len < unit_min * reps {
        return Err(LayoutError::Config(format!(
            "max length {max_len} too short for a unit of {unit_min} repeated {reps} times"
        )));
    }

    let alphabet = activity_alphabet(spec.alphabet_size);
    let mut rng = SeededRng::new(spec.seed);
    let mut seen: HashSet<Vec<Activity>> = HashSet::new();

    let mut normals = Vec::with_capacity(spec.n_normal);
    let mut attempts = 0usize;
    while normals.len() < spec.n_normal {
        let len = rng.range_inclusive(min_len as u64, max_len as u64) as usize;
        let acts = draw_clean(&mut rng, &alphabet, len, policy)?;
        if seen.insert(acts.clone()) {
            let id = normals.len() as u64 + 1;
            normals.push(LabeledVariant::new(id, Variant::new(acts)?, Label::Normal));
        } else {
            attempts += 1;
            if attempts > MAX_REJECTIONS {
                return Err(LayoutError::RejectionCap);
            }
        }
    }

    let mut anomalies = Vec::with_capacity(spec.n_anomalous);
    attempts = 0;
    while anomalies.len() < spec.n_anomalous {
        let unit_max = (unit_min + 1).min(max_len / reps);
        let unit_len = rng.range_inclusive(unit_min as u64, unit_max as u64) as usize;
        let extra = unit_len * (reps - 1);
        let base_min = min_len.saturating_sub(extra).max(unit_len).max(1);
        let base_max = max_len - extra;
        let base_len = rng.range_inclusive(base_min as u64, base_max.max(base_min) as u64) as usize;
        let base = draw_clean(&mut rng, &alphabet, base_len, policy)?;
        let start = rng.below((base_len - unit_len + 1) as u64) as usize;
        let unit: Vec<Activity> = base[start..start + unit_len].to_vec();
        let mut acts = Vec::with_capacity(base_len + extra);
        acts.extend_from_slice(&base[..start + unit_len]);
        for _ in 1..reps {
            acts.extend_from_slice(&unit);
        }
        acts.extend_from_slice(&base[start + unit_len..]);
        let variant = Variant::new(acts.clone())?;
        debug_assert!(is_rework(&variant, policy));
        if seen.insert(acts) {
            let id = (spec.n_normal + anomalies.len()) as u64 + 1;
            anomalies.push(LabeledVariant::new(id, variant, Label::Rework));
        } else {
            attempts += 1;
            if attempts > MAX_REJECTIONS {
                return Err(LayoutError::RejectionCap);
            }
        }
    }
    Ok((normals, anomalies))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramData {
    pub bin_edges: Vec<usize>,
    pub counts: Vec<usize>,
}

/// Equal-width bins over `[0, |ds|)`; bin `i` covers `[edge_i, edge_{i+1})`
/// with `edge_i = floor(i * |ds| / bins)`.
pub fn layout_histogram(ds: &LabeledDataset, bins: usize) -> HistogramData {
    let bins = bins.max(1);
    let len = ds.len();
    let bin_edges: Vec<usize> = (0..=bins).map(|i| i * len / bins).collect();
    let mut counts = vec![0usize; bins];
    for (pos, lv) in ds.items().iter().enumerate() {
        if lv.label == Label::Rework {
            // last edge <= pos
            let bin = bin_edges.partition_point(|&e| e <= pos) - 1;
            counts[bin.min(bins - 1)] += 1;
        }
    }
    HistogramData { bin_edges, counts }
}

impl HistogramData {
    /// `bin_start,bin_end,count` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), LayoutError> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let io = |e: csv::Error| LayoutError::Io(std::io::Error::other(e));
        wtr.write_record(["bin_start", "bin_end", "count"]).map_err(io)?;
        for (i, c) in self.counts.iter().enumerate() {
            wtr.write_record([
                self.bin_edges[i].to_string(),
                self.bin_edges[i + 1].to_string(),
                c.to_string(),
            ])
            .map_err(io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Written as `layout.json` next to an arranged dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSidecar {
    pub spec: LayoutSpec,
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub insertion_indices: Vec<usize>,
}

/// Samples indices and arranges in one step.
pub fn lay_out(
    spec: &LayoutSpec,
    normals: &[LabeledVariant],
    anomalies: &[LabeledVariant],
    provenance: &str,
) -> Result<(LabeledDataset, LayoutSidecar), LayoutError> {
    let indices = sample_insertion_indices(spec, anomalies.len(), normals.len())?;
    let ds = arrange_dataset(normals, anomalies, &indices, provenance)?;
    Ok((
        ds,
        LayoutSidecar {
            spec: spec.clone(),
            n_normal: normals.len(),
            n_anomalous: anomalies.len(),
            insertion_indices: indices,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(id: u64, name: &str, label: Label) -> LabeledVariant {
        LabeledVariant::new(id, Variant::from_names(&[name]).unwrap(), label)
    }

    fn names(ds: &LabeledDataset) -> Vec<String> {
        ds.items().iter().map(|l| l.variant.join("")).collect()
    }

    #[test]
    fn zero_anomalies_gives_empty_indices() {
        for kind in Distribution::ALL {
            let spec = LayoutSpec::new(kind, 1);
            assert!(sample_insertion_indices(&spec, 0, 10).unwrap().is_empty());
        }
    }

    #[test]
    fn indices_sorted_and_in_range() {
        for kind in Distribution::ALL {
            for seed in 0..20 {
                let idx = sample_insertion_indices(&LayoutSpec::new(kind, seed), 71, 689).unwrap();
                assert_eq!(idx.len(), 71);
                assert!(idx.windows(2).all(|w| w[0] <= w[1]));
                assert!(idx.iter().all(|&i| i <= 689));
            }
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = LayoutSpec::new(Distribution::Normal, 0);
        spec.mean_fraction = 1.5;
        assert!(matches!(
            sample_insertion_indices(&spec, 3, 10),
            Err(LayoutError::Config(_))
        ));
        let mut spec = LayoutSpec::new(Distribution::Exponential, 0);
        spec.scale_fraction = 0.0;
        assert!(sample_insertion_indices(&spec, 3, 10).is_err());
        assert!(sample_insertion_indices(&LayoutSpec::new(Distribution::Uniform, 0), 3, 0).is_err());
    }

    #[test]
    fn head_insertion() {
        let normals = [lv(1, "n1", Label::Normal), lv(2, "n2", Label::Normal)];
        let anomalies = [lv(9, "a1", Label::Rework)];
        let ds = arrange_dataset(&normals, &anomalies, &[0], "t").unwrap();
        assert_eq!(names(&ds), ["a1", "n1", "n2"]);
        assert_eq!(ds.items().iter().map(|l| l.id).collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn repeated_index_golden() {
        let normals = [
            lv(1, "n1", Label::Normal),
            lv(2, "n2", Label::Normal),
            lv(3, "n3", Label::Normal),
        ];
        let anomalies = [lv(4, "a1", Label::Rework), lv(5, "a2", Label::Rework)];
        let ds = arrange_dataset(&normals, &anomalies, &[1, 1], "t").unwrap();
        assert_eq!(names(&ds), ["n1", "a1", "a2", "n2", "n3"]);

        let ds = arrange_dataset(&normals, &anomalies, &[0, 3], "t").unwrap();
        assert_eq!(names(&ds), ["a1", "n1", "n2", "n3", "a2"]);
    }

    #[test]
    fn arrange_errors() {
        let normals = [lv(1, "n1", Label::Normal)];
        let anomalies = [lv(2, "a1", Label::Rework)];
        assert!(arrange_dataset(&normals, &anomalies, &[], "t").is_err());
        assert!(arrange_dataset(&normals, &anomalies, &[2], "t").is_err());
        let two = [lv(2, "a1", Label::Rework), lv(3, "a2", Label::Rework)];
        assert!(arrange_dataset(&normals, &two, &[1, 0], "t").is_err());
    }

    #[test]
    fn alphabet_names() {
        assert_eq!(letter_name(0), "A");
        assert_eq!(letter_name(25), "Z");
        assert_eq!(letter_name(26), "AA");
        assert_eq!(letter_name(27), "AB");
        assert_eq!(activity_alphabet(3)[2].as_str(), "Activity C");
    }

    #[test]
    fn synthetic_labels_agree_with_detector() {
        for policy in [DetectPolicy::tandem(1), DetectPolicy::tandem(2), DetectPolicy::recurrent(2)] {
            let spec = SyntheticSpec {
                n_normal: 200,
                n_anomalous: 40,
                policy,
                seed: 5,
                ..SyntheticSpec::default()
            };
            let (normals, anomalies) = generate_synthetic(&spec).unwrap();
            assert_eq!(normals.len(), 200);
            assert_eq!(anomalies.len(), 40);
            assert!(normals.iter().all(|v| !is_rework(&v.variant, policy)));
            assert!(anomalies.iter().all(|v| is_rework(&v.variant, policy)));
            for v in normals.iter().chain(&anomalies) {
                assert!((4..=12).contains(&v.variant.len()), "{}", v.variant.len());
            }
        }
    }

    #[test]
    fn synthetic_no_anomalies() {
        let spec = SyntheticSpec {
            n_normal: 10,
            n_anomalous: 0,
            ..SyntheticSpec::default()
        };
        let (_, anomalies) = generate_synthetic(&spec).unwrap();
        assert!(anomalies.is_empty());
    }

    #[test]
    fn synthetic_config_errors() {
        let spec = SyntheticSpec {
            alphabet_size: 1,
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(LayoutError::Config(_))));
        let spec = SyntheticSpec {
            len_range: (5, 3),
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(LayoutError::Config(_))));
    }

    #[test]
    fn rejection_cap_reports_error() {
        // Two letters, long variants, any repeated activity counts: impossible.
        let spec = SyntheticSpec {
            n_normal: 5,
            n_anomalous: 0,
            alphabet_size: 2,
            len_range: (6, 6),
            policy: DetectPolicy::recurrent(1),
            seed: 0,
        };
        assert!(matches!(generate_synthetic(&spec), Err(LayoutError::RejectionCap)));
    }

    #[test]
    fn histogram_all_at_head() {
        let items: Vec<_> = (0..10)
            .map(|i| lv(i + 1, &format!("v{i}"), if i < 3 { Label::Rework } else { Label::Normal }))
            .collect();
        let ds = LabeledDataset::new(items, "t").unwrap();
        let h = layout_histogram(&ds, 2);
        assert_eq!(h.counts, vec![3, 0]);
        assert_eq!(h.bin_edges, vec![0, 5, 10]);

        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "bin_start,bin_end,count\n0,5,3\n5,10,0\n"
        );
    }

    #[test]
    fn histogram_more_bins_than_items() {
        let ds = LabeledDataset::new(vec![lv(1, "a", Label::Rework), lv(2, "b", Label::Rework)], "t").unwrap();
        let h = layout_histogram(&ds, 5);
        assert_eq!(h.counts.iter().sum::<usize>(), 2);
        assert_eq!(h.counts.len(), 5);
    }
}
