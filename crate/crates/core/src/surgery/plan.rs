use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::models::init::fresh_head;
use crate::models::{layout, AxisRole, ModelSpec, Parameters, SemanticDim};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// How one student axis reads its teacher axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AxisPlan {
    All,
    Indices(Vec<usize>),
}

impl AxisPlan {
    /// Resolved index list for a teacher axis of extent `extent`.
    pub fn resolve(&self, extent: usize) -> Vec<usize> {
        match self {
            AxisPlan::All => (0..extent).collect(),
            AxisPlan::Indices(v) => v.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AxisRepr {
    Tag(String),
    Indices(Vec<usize>),
}

impl Serialize for AxisPlan {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AxisPlan::All => AxisRepr::Tag("all".into()),
            AxisPlan::Indices(v) => AxisRepr::Indices(v.clone()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AxisPlan {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match AxisRepr::deserialize(d)? {
            AxisRepr::Tag(t) if t == "all" => Ok(AxisPlan::All),
            AxisRepr::Tag(t) => Err(serde::de::Error::custom(format!("unknown axis tag `{t}`"))),
            AxisRepr::Indices(v) => Ok(AxisPlan::Indices(v)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub teacher_tensor: String,
    pub axes: Vec<AxisPlan>,
}

/// Student tensor name → teacher source and per-axis indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SelectionPlan {
    pub entries: BTreeMap<String, PlanEntry>,
}

impl SelectionPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Checks the plan against the teacher tensors and the student layout:
    /// every non-head student tensor is covered, ranks agree, and each index
    /// list is strictly increasing, in range and as long as the student axis.
    pub fn validate(&self, teacher: &Parameters, student: &ModelSpec) -> Result<()> {
        let fail = |msg: String| Err(Error::PlanIntegrity(msg));
        let table = layout(student)?;
        let body: Vec<_> = table.iter().filter(|e| !e.kind.is_head()).collect();
        if body.len() != self.entries.len() {
            return fail(format!("plan has {} entries, student needs {}", self.entries.len(), body.len()));
        }
        for e in body {
            let Some(entry) = self.entries.get(&e.name) else {
                return fail(format!("no plan entry for `{}`", e.name));
            };
            let Some(src) = teacher.get(&entry.teacher_tensor) else {
                return fail(format!("`{}` reads missing teacher tensor `{}`", e.name, entry.teacher_tensor));
            };
            if entry.axes.len() != e.shape.len() || src.rank() != e.shape.len() {
                return fail(format!(
                    "`{}` has rank {}, plan gives {} axes over a rank-{} teacher tensor",
                    e.name,
                    e.shape.len(),
                    entry.axes.len(),
                    src.rank()
                ));
            }
            for (ax, (plan, (&ws, &wt))) in entry.axes.iter().zip(e.shape.iter().zip(src.shape())).enumerate() {
                match plan {
                    AxisPlan::All if ws != wt => {
                        return fail(format!("`{}` axis {ax}: `all` over teacher extent {wt}, student needs {ws}", e.name))
                    }
                    AxisPlan::All => {}
                    AxisPlan::Indices(idx) => {
                        if idx.len() != ws {
                            return fail(format!("`{}` axis {ax}: {} indices for extent {ws}", e.name, idx.len()));
                        }
                        if idx.windows(2).any(|w| w[0] >= w[1]) {
                            return fail(format!("`{}` axis {ax}: indices are not strictly increasing", e.name));
                        }
                        if let Some(&bad) = idx.iter().find(|&&i| i >= wt) {
                            return fail(format!("`{}` axis {ax}: index {bad} out of range for extent {wt}", e.name));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Per student tensor-axis, the index list into the underlying semantic
    /// width (group copies folded back to the first group).
    pub fn semantic_lists(&self, student: &ModelSpec) -> Result<Vec<(SemanticDim, String, Vec<usize>)>> {
        let mut out = Vec::new();
        for e in layout(student)?.iter().filter(|e| !e.kind.is_head()) {
            let entry = self
                .entries
                .get(&e.name)
                .ok_or_else(|| Error::PlanIntegrity(format!("no plan entry for `{}`", e.name)))?;
            for (ax, role) in e.axes.iter().enumerate() {
                if let AxisRole::Dim { dim, groups } = *role {
                    let ws = e.shape[ax] / groups;
                    let list = match &entry.axes[ax] {
                        AxisPlan::All => (0..ws).collect(),
                        AxisPlan::Indices(v) => v[..ws].to_vec(),
                    };
                    out.push((dim, format!("{}[{ax}]", e.name), list));
                }
            }
        }
        Ok(out)
    }
}

/// Gathers `t` at `lists[a]` along every axis `a`.
pub fn gather(t: &Tensor, lists: &[Vec<usize>]) -> Result<Tensor> {
    let shape = t.shape();
    if lists.len() != shape.len() {
        return Err(Error::PlanIntegrity(format!("{} index lists for a rank-{} tensor", lists.len(), shape.len())));
    }
    for (ax, (l, &w)) in lists.iter().zip(shape).enumerate() {
        if let Some(&bad) = l.iter().find(|&&i| i >= w) {
            return Err(Error::PlanIntegrity(format!("axis {ax}: index {bad} out of range for extent {w}")));
        }
    }
    let mut data = t.data().to_vec();
    let mut cur = shape.to_vec();
    for (ax, l) in lists.iter().enumerate() {
        let outer: usize = cur[..ax].iter().product();
        let inner: usize = cur[ax + 1..].iter().product();
        let mut next = Vec::with_capacity(outer * l.len() * inner);
        for o in 0..outer {
            let base = o * cur[ax] * inner;
            for &i in l {
                next.extend_from_slice(&data[base + i * inner..base + (i + 1) * inner]);
            }
        }
        data = next;
        cur[ax] = l.len();
    }
    Tensor::new(cur, data)
}

/// Builds a student from `teacher` by gathering every planned tensor and
/// attaching a freshly initialised classifier head.
pub fn apply_plan(teacher: &Parameters, plan: &SelectionPlan, student: &ModelSpec, head_seed: u64) -> Result<Parameters> {
    plan.validate(teacher, student)?;
    let mut out = Parameters::new();
    for (name, entry) in &plan.entries {
        let src = teacher.require(&entry.teacher_tensor)?;
        let lists: Vec<Vec<usize>> = entry.axes.iter().zip(src.shape()).map(|(a, &w)| a.resolve(w)).collect();
        out.insert(name.clone(), gather(src, &lists)?);
    }
    for (name, t) in fresh_head(student, head_seed)? {
        out.insert(name, t);
    }
    out.check_against(student)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gather_semantics() {
        let t = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = gather(&t, &[vec![0], vec![1, 3]]).unwrap();
        assert_eq!(g.shape(), &[1, 2]);
        assert_eq!(g.data(), &[2.0, 4.0]);
        assert!(matches!(gather(&t, &[vec![0], vec![4]]), Err(Error::PlanIntegrity(_))));
    }

    #[test]
    fn axis_json_shape() {
        let entry = PlanEntry { teacher_tensor: "w".into(), axes: vec![AxisPlan::All, AxisPlan::Indices(vec![0, 2])] };
        let mut plan = SelectionPlan::default();
        plan.entries.insert("w".into(), entry);
        let json = serde_json::to_string(&plan).unwrap();
        assert_eq!(json, r#"{"w":{"teacher_tensor":"w","axes":["all",[0,2]]}}"#);
        assert_eq!(SelectionPlan::from_json(&json).unwrap(), plan);
        assert!(SelectionPlan::from_json(r#"{"w":{"teacher_tensor":"w","axes":["some"]}}"#).is_err());
    }
}
