//! Gradient-boosted regression trees with squared-error loss.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GbError {
    #[error("fit error: {0}")]
    Fit(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("ensemble format error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbConfig {
    pub n_stages: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for GbConfig {
    fn default() -> Self {
        Self {
            n_stages: 100,
            learning_rate: 0.05,
            max_depth: 5,
            min_samples_split: 2,
            min_samples_leaf: 1,
        }
    }
}

impl GbConfig {
    pub fn validate(&self) -> Result<(), GbError> {
        if self.n_stages < 1 {
            return Err(GbError::Config("n_stages must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(GbError::Config(format!("learning_rate {} not in (0, 1]", self.learning_rate)));
        }
        if self.max_depth < 1 {
            return Err(GbError::Config("max_depth must be at least 1".into()));
        }
        if self.min_samples_split < 2 || self.min_samples_leaf < 1 {
            return Err(GbError::Config("min_samples_split >= 2 and min_samples_leaf >= 1 required".into()));
        }
        Ok(())
    }
}

/// A tree node. Children are indices into [`Tree::nodes`]; rows with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: usize,
        #[serde(with = "hexf")]
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        #[serde(with = "hexf")]
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value } => Some(*value),
            Node::Split { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbEnsemble {
    pub n_features: usize,
    #[serde(with = "hexf")]
    pub base_prediction: f64,
    #[serde(with = "hexf")]
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl GbEnsemble {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ensemble serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, GbError> {
        let e: GbEnsemble = serde_json::from_str(s).map_err(|e| GbError::Format(e.to_string()))?;
        for t in &e.trees {
            if t.nodes.is_empty() {
                return Err(GbError::Format("empty tree".into()));
            }
            for n in &t.nodes {
                match n {
                    Node::Split {
                        feature, left, right, ..
                    } => {
                        if *feature >= e.n_features || *left >= t.nodes.len() || *right >= t.nodes.len() {
                            return Err(GbError::Format("node index out of range".into()));
                        }
                    }
                    Node::Leaf { value } if !value.is_finite() => {
                        return Err(GbError::Format("non-finite leaf".into()));
                    }
                    Node::Leaf { .. } => {}
                }
            }
        }
        Ok(e)
    }
}

/// Fits an ensemble to `targets`. Returns it with its predictions on the
/// training rows.
pub fn fit_gb(x: ArrayView2<f64>, targets: &[f64], cfg: &GbConfig) -> Result<(GbEnsemble, Vec<f64>), GbError> {
    cfg.validate()?;
    let n = x.nrows();
    if n != targets.len() {
        return Err(GbError::Input(format!("{} rows but {} targets", n, targets.len())));
    }
    if n < 2 {
        return Err(GbError::Fit(format!("need at least 2 rows, got {n}")));
    }
    if x.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(GbError::Input("non-finite feature or target".into()));
    }
    let d = x.ncols();
    let cols: Vec<Vec<f64>> = (0..d).map(|j| x.column(j).to_vec()).collect();
    // rows ordered by value per feature, index breaking ties
    let sorted: Vec<Vec<u32>> = cols
        .iter()
        .map(|c| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let base = mean(targets.iter().copied());
    let mut pred = vec![base; n];
    let mut resid = vec![0.0; n];
    let mut node_of = vec![0u32; n];
    let mut trees = Vec::with_capacity(cfg.n_stages);
    for _ in 0..cfg.n_stages {
        for i in 0..n {
            resid[i] = targets[i] - pred[i];
        }
        let tree = Builder {
            cols: &cols,
            sorted: &sorted,
            resid: &resid,
            cfg,
            node_of: &mut node_of,
        }
        .build();
        let mut row = vec![0.0; d];
        for (i, p) in pred.iter_mut().enumerate() {
            row.iter_mut().zip(&cols).for_each(|(r, c)| *r = c[i]);
            *p += cfg.learning_rate * tree.predict_row(&row);
        }
        trees.push(tree);
    }
    let ens = GbEnsemble {
        n_features: d,
        base_prediction: base,
        learning_rate: cfg.learning_rate,
        trees,
    };
    Ok((ens, pred))
}

pub fn predict_gb(ens: &GbEnsemble, x: ArrayView2<f64>) -> Result<Vec<f64>, GbError> {
    if x.ncols() != ens.n_features {
        return Err(GbError::Input(format!(
            "feature width {} but ensemble expects {}",
            x.ncols(),
            ens.n_features
        )));
    }
    let mut row = vec![0.0; x.ncols()];
    Ok(x.rows()
        .into_iter()
        .map(|r| {
            row.iter_mut().zip(r.iter()).for_each(|(d, s)| *d = *s);
            ens.trees
                .iter()
                .fold(ens.base_prediction, |acc, t| acc + ens.learning_rate * t.predict_row(&row))
        })
        .collect())
}

/// Relative slack under which two split gains count as equal, so that the
/// tie rule is not decided by summation-order rounding.
pub const GAIN_TIE_TOLERANCE: f64 = 1e-10;

struct Builder<'a> {
    cols: &'a [Vec<f64>],
    sorted: &'a [Vec<u32>],
    resid: &'a [f64],
    cfg: &'a GbConfig,
    /// Node currently holding each row during construction.
    node_of: &'a mut [u32],
}

#[derive(Debug, Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Per-node running state of the split scan along one feature.
#[derive(Clone, Copy)]
struct Scan {
    nl: usize,
    sl: f64,
    prev: Option<f64>,
}

impl Builder<'_> {
    fn build(self) -> Tree {
        let n = self.resid.len();
        self.node_of.fill(0);
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut frontier = vec![0usize];
        for depth in 0..=self.cfg.max_depth {
            if frontier.is_empty() {
                break;
            }
            let mut open = vec![false; nodes.len()];
            frontier.iter().for_each(|&k| open[k] = true);
            // per-node counts, sums (row order) and members
            let mut cnt = vec![0usize; nodes.len()];
            let mut sum = vec![0.0; nodes.len()];
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
            for i in 0..n {
                let k = self.node_of[i] as usize;
                if open[k] {
                    cnt[k] += 1;
                    sum[k] += self.resid[i];
                    members[k].push(i);
                }
            }
            let mut splittable = vec![false; nodes.len()];
            let mut sse = vec![0.0; nodes.len()];
            for &k in &frontier {
                let mean = mean(members[k].iter().map(|&i| self.resid[i]));
                nodes[k] = Node::Leaf { value: mean };
                sse[k] = members[k].iter().map(|&i| (self.resid[i] - mean).powi(2)).sum::<f64>();
                splittable[k] = depth < self.cfg.max_depth
                    && cnt[k] >= self.cfg.min_samples_split
                    && cnt[k] >= 2 * self.cfg.min_samples_leaf
                    && sse[k] / cnt[k] as f64 > f64::EPSILON;
            }
            if !frontier.iter().any(|&k| splittable[k]) {
                break;
            }
            let best = self.best_splits(&splittable, &cnt, &sum, &sse);
            let mut next = Vec::new();
            for &k in &frontier {
                let Some(s) = best[k] else { continue };
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[k] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right: left + 1,
                };
                for &i in &members[k] {
                    self.node_of[i] = if self.cols[s.feature][i] <= s.threshold { left } else { left + 1 } as u32;
                }
                next.push(left);
                next.push(left + 1);
            }
            frontier = next;
        }
        Tree { nodes }
    }

    /// Best split of every splittable node, scanning each feature once in
    /// sorted order. Features ascend and thresholds ascend, so the first
    /// candidate reaching the best gain wins ties.
    fn best_splits(&self, splittable: &[bool], cnt: &[usize], sum: &[f64], sse: &[f64]) -> Vec<Option<Split>> {
        let m = splittable.len();
        let min_leaf = self.cfg.min_samples_leaf;
        let mut best: Vec<Option<Split>> = vec![None; m];
        for (f, order) in self.sorted.iter().enumerate() {
            let col = &self.cols[f];
            let mut scan = vec![Scan { nl: 0, sl: 0.0, prev: None }; m];
            for &i in order {
                let i = i as usize;
                let k = self.node_of[i] as usize;
                if !splittable[k] {
                    continue;
                }
                let v = col[i];
                let st = &mut scan[k];
                if let Some(p) = st.prev {
                    let (nl, nr) = (st.nl, cnt[k] - st.nl);
                    if v > p && nl >= min_leaf && nr >= min_leaf {
                        let sr = sum[k] - st.sl;
                        let gain = st.sl * st.sl / nl as f64 + sr * sr / nr as f64 - sum[k] * sum[k] / cnt[k] as f64;
                        let slack = GAIN_TIE_TOLERANCE * sse[k];
                        if gain > slack && best[k].is_none_or(|b| gain > b.gain + slack) {
                            best[k] = Some(Split {
                                feature: f,
                                threshold: midpoint(p, v),
                                gain,
                            });
                        }
                    }
                }
                st.nl += 1;
                st.sl += self.resid[i];
                st.prev = Some(v);
            }
        }
        best
    }
}

/// Mean with one correction pass, summing in iteration order.
fn mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, s) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    let m = s / n as f64;
    m + values.map(|v| v - m).sum::<f64>() / n as f64
}

/// Midpoint of two consecutive distinct values, kept strictly below `hi` so
/// that `lo` goes left and `hi` right.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m.max(lo)
    } else {
        lo
    }
}

/// Hexadecimal floating-point text (`0x1.8p+1`), exact for every finite f64.
pub mod hexf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn format(v: f64) -> String {
        let bits = v.to_bits();
        let sign = if bits >> 63 == 1 { "-" } else { "" };
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let mant = bits & ((1u64 << 52) - 1);
        if exp == 0x7ff {
            return if mant == 0 { format!("{sign}inf") } else { "nan".into() };
        }
        let (lead, e) = if exp == 0 {
            if mant == 0 {
                return format!("{sign}0x0p+0");
            }
            (0, -1022)
        } else {
            (1, exp - 1023)
        };
        let digits = format!("{mant:013x}");
        let digits = digits.trim_end_matches('0');
        if digits.is_empty() {
            format!("{sign}0x{lead}p{e:+}")
        } else {
            format!("{sign}0x{lead}.{digits}p{e:+}")
        }
    }

    pub fn parse(s: &str) -> Option<f64> {
        let (neg, rest) = match s.strip_prefix('-') {
            Some(r) => (true, r),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let sign = if neg { -1.0 } else { 1.0 };
        if rest == "inf" {
            return Some(sign * f64::INFINITY);
        }
        if rest == "nan" {
            return Some(f64::NAN);
        }
        let body = rest.strip_prefix("0x").or_else(|| rest.strip_prefix("0X"))?;
        let (mantissa, exp) = body.split_once(['p', 'P'])?;
        let exp: i64 = exp.parse().ok()?;
        let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
        if int.is_empty() || frac.len() > 13 {
            return None;
        }
        let lead = u64::from_str_radix(int, 16).ok()?;
        let frac_bits = if frac.is_empty() {
            0
        } else {
            u64::from_str_radix(frac, 16).ok()? << (4 * (13 - frac.len()))
        };
        let bits = match (lead, exp) {
            (0, _) if frac_bits == 0 => 0,
            (0, -1022) => frac_bits,
            (1, e) if (-1022..=1023).contains(&e) => (((e + 1023) as u64) << 52) | frac_bits,
            _ => return None,
        };
        Some(sign * f64::from_bits(bits))
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).ok_or_else(|| serde::de::Error::custom(format!("bad hex float {s:?}")))
    }
}
