// SPDX-License-Identifier: MIT OR Apache-2.0

//! Named activation sites and the read/write hooks attached to a forward pass.
//!
//! Layers and heads are 0-based in memory and 1-based wherever they are
//! printed or serialised, so `HeadOutput { layer: 11, head: 11 }` is "L12H12".

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::spec::ModelSpec;
use crate::chess::Square;
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActivationSite {
    /// One square's residual after the layer's final LayerNorm.
    Residual { layer: usize, square: Square },
    /// A head's 64×d_head output before the output projection.
    HeadOutput { layer: usize, head: usize },
    /// One post-softmax attention weight.
    AttnEntry { layer: usize, head: usize, query: Square, key: Square },
}

impl ActivationSite {
    pub fn layer(&self) -> usize {
        match *self {
            ActivationSite::Residual { layer, .. }
            | ActivationSite::HeadOutput { layer, .. }
            | ActivationSite::AttnEntry { layer, .. } => layer,
        }
    }

    pub fn head(&self) -> Option<usize> {
        match *self {
            ActivationSite::Residual { .. } => None,
            ActivationSite::HeadOutput { head, .. } | ActivationSite::AttnEntry { head, .. } => Some(head),
        }
    }

    /// Number of values a replacement for this site must hold.
    pub fn width(&self, spec: &ModelSpec) -> usize {
        match self {
            ActivationSite::Residual { .. } => spec.d_resid,
            ActivationSite::HeadOutput { .. } => 64 * spec.d_head,
            ActivationSite::AttnEntry { .. } => 1,
        }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.layer() >= spec.n_layers {
            return Err(Error::Hook(format!("{self}: layer out of range (model has {})", spec.n_layers)));
        }
        if let Some(h) = self.head() {
            if h >= spec.n_heads {
                return Err(Error::Hook(format!("{self}: head out of range (model has {})", spec.n_heads)));
            }
        }
        Ok(())
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ActivationSite::Residual { .. } => "residual",
            ActivationSite::HeadOutput { .. } => "head_output",
            ActivationSite::AttnEntry { .. } => "attn_entry",
        }
    }
}

impl fmt::Display for ActivationSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ActivationSite::Residual { layer, square } => write!(f, "L{}:{square}", layer + 1),
            ActivationSite::HeadOutput { layer, head } => write!(f, "L{}H{}", layer + 1, head + 1),
            ActivationSite::AttnEntry { layer, head, query, key } => {
                write!(f, "L{}H{}:{query}>{key}", layer + 1, head + 1)
            }
        }
    }
}

impl fmt::Debug for ActivationSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

fn parse_one_based(text: &str, whole: &str) -> Result<usize> {
    match text.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n - 1),
        _ => Err(Error::Site(format!("{whole:?}: indices are 1-based integers"))),
    }
}

impl FromStr for ActivationSite {
    type Err = Error;

    /// Parses `L3:e4`, `L12H12` or `L12H12:e4>c6`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Site(format!("cannot parse site {s:?}"));
        let rest = s.strip_prefix('L').ok_or_else(bad)?;
        let (head_part, squares) = match rest.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (rest, None),
        };
        let (layer_text, head_text) = match head_part.split_once('H') {
            Some((l, h)) => (l, Some(h)),
            None => (head_part, None),
        };
        let layer = parse_one_based(layer_text, s)?;
        match (head_text, squares) {
            (None, Some(sq)) => Ok(ActivationSite::Residual { layer, square: sq.parse().map_err(|_| bad())? }),
            (Some(h), None) => Ok(ActivationSite::HeadOutput { layer, head: parse_one_based(h, s)? }),
            (Some(h), Some(qk)) => {
                let (q, k) = qk.split_once('>').ok_or_else(bad)?;
                Ok(ActivationSite::AttnEntry {
                    layer,
                    head: parse_one_based(h, s)?,
                    query: q.parse().map_err(|_| bad())?,
                    key: k.parse().map_err(|_| bad())?,
                })
            }
            (None, None) => Err(bad()),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SiteRepr {
    kind: String,
    layer: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    head: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    square: Option<Square>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    query: Option<Square>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    key: Option<Square>,
}

impl Serialize for ActivationSite {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut r = SiteRepr {
            kind: self.kind_name().to_string(),
            layer: self.layer() + 1,
            head: self.head().map(|h| h + 1),
            square: None,
            query: None,
            key: None,
        };
        match *self {
            ActivationSite::Residual { square, .. } => r.square = Some(square),
            ActivationSite::AttnEntry { query, key, .. } => {
                r.query = Some(query);
                r.key = Some(key);
            }
            ActivationSite::HeadOutput { .. } => {}
        }
        r.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ActivationSite {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = SiteRepr::deserialize(d)?;
        let layer = r.layer.checked_sub(1).ok_or_else(|| D::Error::custom("layer is 1-based"))?;
        let head = || {
            r.head
                .and_then(|h| h.checked_sub(1))
                .ok_or_else(|| D::Error::custom("missing or zero head"))
        };
        match r.kind.as_str() {
            "residual" => Ok(ActivationSite::Residual {
                layer,
                square: r.square.ok_or_else(|| D::Error::custom("missing square"))?,
            }),
            "head_output" => Ok(ActivationSite::HeadOutput { layer, head: head()? }),
            "attn_entry" => Ok(ActivationSite::AttnEntry {
                layer,
                head: head()?,
                query: r.query.ok_or_else(|| D::Error::custom("missing query"))?,
                key: r.key.ok_or_else(|| D::Error::custom("missing key"))?,
            }),
            other => Err(D::Error::custom(format!("unknown site kind {other:?}"))),
        }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub enum Patch {
    Zero,
    Value(Vec<f32>),
}

/// How a zero write on an attention entry is realised.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionAblation {
    /// Set the post-softmax weight to 0 and leave the rest of the row alone.
    #[default]
    PostSoftmaxZero,
    /// Mask the score with -inf before the softmax (the row renormalises).
    PreSoftmaxMask,
}

#[derive(Clone, Debug, Default)]
pub struct HookSet {
    pub reads: BTreeSet<ActivationSite>,
    pub writes: BTreeMap<ActivationSite, Patch>,
    pub attention_ablation: AttentionAblation,
}

impl HookSet {
    pub fn new() -> HookSet {
        HookSet::default()
    }

    pub fn is_empty(&self) -> bool {
        self.reads.is_empty() && self.writes.is_empty()
    }

    pub fn read(&mut self, site: ActivationSite) -> &mut Self {
        self.reads.insert(site);
        self
    }

    /// Adds a write; writing the same site twice is an error.
    pub fn write(&mut self, site: ActivationSite, patch: Patch) -> Result<&mut Self> {
        if self.writes.contains_key(&site) {
            return Err(Error::Hook(format!("{site} written twice")));
        }
        self.writes.insert(site, patch);
        Ok(self)
    }

    pub fn zero(&mut self, site: ActivationSite) -> Result<&mut Self> {
        self.write(site, Patch::Zero)
    }

    pub fn with_ablation(mut self, mode: AttentionAblation) -> Self {
        self.attention_ablation = mode;
        self
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        for site in &self.reads {
            site.validate(spec)?;
        }
        for (site, patch) in &self.writes {
            site.validate(spec)?;
            if let Patch::Value(v) = patch {
                let want = site.width(spec);
                if v.len() != want {
                    return Err(Error::Hook(format!(
                        "{site}: replacement has {} values, site holds {want}",
                        v.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn has_writes_in(&self, layer: usize) -> bool {
        self.writes.keys().any(|s| s.layer() == layer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_based_labels_round_trip() {
        let site = ActivationSite::HeadOutput { layer: 11, head: 11 };
        assert_eq!(site.to_string(), "L12H12");
        assert_eq!("L12H12".parse::<ActivationSite>().unwrap(), site);
        let json = serde_json::to_string(&site).unwrap();
        assert_eq!(json, r#"{"kind":"head_output","layer":12,"head":12}"#);
        assert_eq!(serde_json::from_str::<ActivationSite>(&json).unwrap(), site);

        for text in ["L1:a1", "L15:h8", "L3H2:e4>c6"] {
            let s: ActivationSite = text.parse().unwrap();
            assert_eq!(s.to_string(), text);
            let j = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<ActivationSite>(&j).unwrap(), s);
        }
        assert!("L0H1".parse::<ActivationSite>().is_err());
        assert!("X1H1".parse::<ActivationSite>().is_err());
    }

    #[test]
    fn validation() {
        let spec = ModelSpec::synthetic();
        let mut h = HookSet::new();
        h.write(ActivationSite::HeadOutput { layer: 0, head: 0 }, Patch::Value(vec![0.0; 3]))
            .unwrap();
        assert!(h.validate(&spec).is_err());

        let mut h = HookSet::new();
        h.read(ActivationSite::HeadOutput { layer: 9, head: 0 });
        assert!(h.validate(&spec).is_err());

        let mut h = HookSet::new();
        let s = ActivationSite::Residual { layer: 0, square: Square::from_index(3) };
        h.zero(s).unwrap();
        assert!(h.zero(s).is_err());
    }
}
