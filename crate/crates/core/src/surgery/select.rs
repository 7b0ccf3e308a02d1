use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::plan::{AxisPlan, PlanEntry, SelectionPlan};
use crate::models::{layout, AxisRole, ModelSpec, Parameters, SemanticDim, TensorLayout};
use crate::rng::substream;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Uniform,
    Consecutive,
    RandomConsistent,
    RandomInconsistent,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] =
        [StrategyKind::Uniform, StrategyKind::Consecutive, StrategyKind::RandomConsistent, StrategyKind::RandomInconsistent];

    /// Attaches `seed` to the random variants; ignored otherwise.
    pub fn with_seed(self, seed: u64) -> SelectionStrategy {
        match self {
            StrategyKind::Uniform => SelectionStrategy::Uniform,
            StrategyKind::Consecutive => SelectionStrategy::Consecutive,
            StrategyKind::RandomConsistent => SelectionStrategy::RandomConsistent { seed },
            StrategyKind::RandomInconsistent => SelectionStrategy::RandomInconsistent { seed },
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Uniform => "uniform",
            StrategyKind::Consecutive => "consecutive",
            StrategyKind::RandomConsistent => "random_consistent",
            StrategyKind::RandomInconsistent => "random_inconsistent",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown selection strategy `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionStrategy {
    /// Evenly strided indices.
    Uniform,
    /// One contiguous block.
    Consecutive,
    /// One random sorted sample per semantic width, shared by every tensor.
    RandomConsistent { seed: u64 },
    /// A fresh random sorted sample for every tensor axis.
    RandomInconsistent { seed: u64 },
}

impl SelectionStrategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            SelectionStrategy::Uniform => StrategyKind::Uniform,
            SelectionStrategy::Consecutive => StrategyKind::Consecutive,
            SelectionStrategy::RandomConsistent { .. } => StrategyKind::RandomConsistent,
            SelectionStrategy::RandomInconsistent { .. } => StrategyKind::RandomInconsistent,
        }
    }

    pub fn is_consistent(&self) -> bool {
        !matches!(self, SelectionStrategy::RandomInconsistent { .. })
    }
}

/// Student block → teacher block, per stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerMap {
    pub stages: Vec<Vec<usize>>,
}

/// First-N layer selection: student block `j` of stage `i` reads teacher
/// block `j` of stage `i`.
pub fn select_layers(teacher: &ModelSpec, student: &ModelSpec) -> Result<LayerMap> {
    teacher.validate()?;
    student.validate()?;
    let fail = |msg: String| Err(Error::Incompatible(msg));
    if teacher.family != student.family {
        return fail(format!("teacher is {}, student is {}", teacher.family, student.family));
    }
    if teacher.stages() != student.stages() {
        return fail(format!("teacher has {} stages, student has {}", teacher.stages(), student.stages()));
    }
    if teacher.patch != student.patch || teacher.image != student.image {
        return fail("teacher and student disagree on patch size or image shape".into());
    }
    let mut stages = Vec::with_capacity(student.stages());
    for i in 0..student.stages() {
        let (dt, ds) = (teacher.stage_depths[i], student.stage_depths[i]);
        if ds > dt {
            return fail(format!("stage {i}: student depth {ds} exceeds teacher depth {dt}"));
        }
        let (wt, ws) = (teacher.stage_dims[i], student.stage_dims[i]);
        if ws > wt {
            return fail(format!("stage {i}: student width {ws} exceeds teacher width {wt}"));
        }
        stages.push((0..ds).collect());
    }
    Ok(LayerMap { stages })
}

fn block_of(name: &str) -> Option<(usize, usize, &str)> {
    let rest = name.strip_prefix("stage")?;
    let (i, rest) = rest.split_once('.')?;
    let rest = rest.strip_prefix("block")?;
    let (j, tail) = rest.split_once('.')?;
    Some((i.parse().ok()?, j.parse().ok()?, tail))
}

/// Student tensor name → teacher tensor name. Names are identical up to the
/// block renumbering of `layers`; the classifier head is never mapped.
pub fn map_components(
    layers: &LayerMap,
    teacher: &Parameters,
    student: &[TensorLayout],
) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for e in student.iter().filter(|e| !e.kind.is_head()) {
        let source = match block_of(&e.name) {
            Some((i, j, tail)) => {
                let tj = layers
                    .stages
                    .get(i)
                    .and_then(|s| s.get(j))
                    .ok_or_else(|| Error::Mapping(format!("`{}` has no layer in the layer map", e.name)))?;
                format!("stage{i}.block{tj}.{tail}")
            }
            None => e.name.clone(),
        };
        let Some(t) = teacher.get(&source) else {
            return Err(Error::Mapping(format!("orphan student tensor `{}`: teacher has no `{source}`", e.name)));
        };
        if t.rank() != e.shape.len() {
            return Err(Error::Mapping(format!(
                "`{}` has rank {} but teacher `{source}` has rank {}",
                e.name,
                e.shape.len(),
                t.rank()
            )));
        }
        out.insert(e.name.clone(), source);
    }
    Ok(out)
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

/// Index list of length `ws` into a width `wt > ws`.
fn index_list(strategy: SelectionStrategy, label: &str, wt: usize, ws: usize, offset: usize) -> Vec<usize> {
    match strategy {
        SelectionStrategy::Uniform => (0..ws).map(|i| (offset * ws + i * wt) / ws).collect(),
        SelectionStrategy::Consecutive => {
            let start = (offset * ws).min(wt - ws);
            (start..start + ws).collect()
        }
        SelectionStrategy::RandomConsistent { seed } | SelectionStrategy::RandomInconsistent { seed } => {
            let mut rng = substream(seed, &format!("select:{label}"));
            let a = sorted(sample(&mut rng, wt, ws).into_vec());
            if offset == 0 {
                return a;
            }
            let taken: BTreeSet<usize> = a.iter().copied().collect();
            let rest: Vec<usize> = (0..wt).filter(|i| !taken.contains(i)).collect();
            if rest.len() >= ws {
                sorted(sample(&mut rng, rest.len(), ws).into_iter().map(|k| rest[k]).collect())
            } else {
                let extra = sample(&mut rng, ws, ws - rest.len()).into_iter().map(|k| a[k]);
                sorted(rest.iter().copied().chain(extra).collect())
            }
        }
    }
}

/// Element selection: one index list per reduced axis. `offset` 0 gives the
/// main student's subset, 1 the complementary subset.
pub fn select_elements(
    components: &BTreeMap<String, String>,
    teacher: &Parameters,
    student: &ModelSpec,
    strategy: SelectionStrategy,
    offset: usize,
) -> Result<SelectionPlan> {
    if offset > 1 {
        return Err(Error::Range(format!("selection offset must be 0 or 1, got {offset}")));
    }
    let mut widths: BTreeMap<SemanticDim, usize> = BTreeMap::new();
    let mut shared: BTreeMap<SemanticDim, Vec<usize>> = BTreeMap::new();
    let mut plan = SelectionPlan::default();
    for e in layout(student)?.iter().filter(|e| !e.kind.is_head()) {
        let source = components
            .get(&e.name)
            .ok_or_else(|| Error::Mapping(format!("`{}` is missing from the component map", e.name)))?;
        let t = teacher.require(source)?;
        let mut axes = Vec::with_capacity(e.shape.len());
        for (ax, (&role, (&se, &te))) in e.axes.iter().zip(e.shape.iter().zip(t.shape())).enumerate() {
            let incompatible = |msg: String| Error::Incompatible(format!("`{}` axis {ax}: {msg}", e.name));
            let (dim, groups) = match role {
                AxisRole::Dim { dim, groups } => (dim, groups),
                _ if se == te => {
                    axes.push(AxisPlan::All);
                    continue;
                }
                _ => return Err(incompatible(format!("fixed extent {se} differs from teacher extent {te}"))),
            };
            if te % groups != 0 {
                return Err(incompatible(format!("teacher extent {te} is not {groups} groups")));
            }
            let (ws, wt) = (se / groups, te / groups);
            if *widths.entry(dim).or_insert(wt) != wt {
                return Err(incompatible(format!("{dim} has teacher width {wt} here and {} elsewhere", widths[&dim])));
            }
            if ws > wt {
                return Err(incompatible(format!("{dim}: student width {ws} exceeds teacher width {wt}")));
            }
            if ws == wt {
                axes.push(AxisPlan::All);
                continue;
            }
            let list = if strategy.is_consistent() {
                shared.entry(dim).or_insert_with(|| index_list(strategy, &dim.to_string(), wt, ws, offset)).clone()
            } else {
                index_list(strategy, &format!("{}:{ax}", e.name), wt, ws, offset)
            };
            axes.push(AxisPlan::Indices((0..groups).flat_map(|g| list.iter().map(move |&i| g * wt + i)).collect()));
        }
        plan.entries.insert(e.name.clone(), PlanEntry { teacher_tensor: source.clone(), axes });
    }
    plan.validate(teacher, student)?;
    Ok(plan)
}

/// Plans for the main student (offset 0) and the auxiliary student (offset 1).
pub fn dual_plans(
    teacher: &Parameters,
    teacher_spec: &ModelSpec,
    student_spec: &ModelSpec,
    strategy: SelectionStrategy,
) -> Result<(SelectionPlan, SelectionPlan)> {
    let layers = select_layers(teacher_spec, student_spec)?;
    let components = map_components(&layers, teacher, &layout(student_spec)?)?;
    Ok((
        select_elements(&components, teacher, student_spec, strategy, 0)?,
        select_elements(&components, teacher, student_spec, strategy, 1)?,
    ))
}

/// Single plan (offset 0), for one-student selection.
pub fn single_plan(
    teacher: &Parameters,
    teacher_spec: &ModelSpec,
    student_spec: &ModelSpec,
    strategy: SelectionStrategy,
) -> Result<SelectionPlan> {
    let layers = select_layers(teacher_spec, student_spec)?;
    let components = map_components(&layers, teacher, &layout(student_spec)?)?;
    select_elements(&components, teacher, student_spec, strategy, 0)
}
