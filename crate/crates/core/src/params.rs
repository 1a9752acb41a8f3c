use std::collections::BTreeMap;
use std::sync::Arc;

use orthoseg_tensor::{Graph, Tensor, Var};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Arc<Tensor>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub trainable: usize,
    pub total: usize,
}

/// Outcome of [`ModelParams::import_weights`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImportReport {
    /// `(source name, destination name)` pairs that were copied.
    pub copied: Vec<(String, String)>,
    /// Source entries left alone, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Named network parameters, keyed by layer path
/// (`encoder.primary.block3.conv1.weights`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    entries: BTreeMap<String, Param>,
}

/// Graph handles for one forward pass. Frozen parameters enter as constants.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::Usage(format!("no parameter named `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Usage(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(
            name,
            Param {
                value: Arc::new(value),
                trainable: true,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| p.value.as_ref())
            .ok_or_else(|| Error::Usage(format!("no parameter named `{name}`")))
    }

    /// Replaces a value, keeping the trainable flag. The shape must match.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Usage(format!("no parameter named `{name}`")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Usage(format!(
                "`{name}`: shape {:?} does not match {:?}",
                value.shape(),
                p.value.shape()
            )));
        }
        p.value = Arc::new(value);
        Ok(())
    }

    /// Mutable access; copies the tensor first if a graph still shares it.
    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| Arc::make_mut(&mut p.value))
            .ok_or_else(|| Error::Usage(format!("no parameter named `{name}`")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Toggles every parameter under `prefix` (a whole path component match:
    /// `encoder.primary.block1` does not match `block10`). Returns the
    /// number of entries touched.
    pub fn set_trainable(&mut self, prefix: &str, flag: bool) -> Result<usize> {
        let mut hits = 0;
        for (name, p) in self.entries.iter_mut() {
            if path_matches(name, prefix) {
                p.trainable = flag;
                hits += 1;
            }
        }
        if hits == 0 {
            return Err(Error::Usage(format!(
                "pattern `{prefix}` matches no parameter"
            )));
        }
        Ok(hits)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|p| p.trainable)
    }

    pub fn count(&self) -> ParamCount {
        let mut c = ParamCount {
            trainable: 0,
            total: 0,
        };
        for p in self.entries.values() {
            c.total += p.value.len();
            if p.trainable {
                c.trainable += p.value.len();
            }
        }
        c
    }

    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(name, p)| {
                let v = if p.trainable {
                    g.param_shared(Arc::clone(&p.value))
                } else {
                    Var::constant_shared(Arc::clone(&p.value))
                };
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }

    pub fn export(&self) -> BTreeMap<String, Tensor> {
        self.entries
            .iter()
            .map(|(k, p)| (k.clone(), p.value.as_ref().clone()))
            .collect()
    }

    /// Copies tensors from `source` by name. Each `(from, to)` mapping
    /// rewrites a leading path prefix; names without a mapping are used
    /// unchanged. Missing destinations and shape mismatches are skipped
    /// and reported.
    pub fn import_weights(
        &mut self,
        source: &BTreeMap<String, Tensor>,
        mapping: &[(String, String)],
    ) -> ImportReport {
        let mut report = ImportReport::default();
        for (src, tensor) in source {
            let dst = mapping
                .iter()
                .find(|(from, _)| path_matches(src, from))
                .map(|(from, to)| format!("{to}{}", &src[from.len()..]))
                .unwrap_or_else(|| src.clone());
            match self.entries.get_mut(&dst) {
                None => report
                    .skipped
                    .push((src.clone(), format!("no destination `{dst}`"))),
                Some(p) if p.value.shape() != tensor.shape() => report.skipped.push((
                    src.clone(),
                    format!(
                        "shape {:?} vs destination {:?}",
                        tensor.shape(),
                        p.value.shape()
                    ),
                )),
                Some(p) => {
                    p.value = Arc::new(tensor.clone());
                    report.copied.push((src.clone(), dst));
                }
            }
        }
        report
    }
}

fn path_matches(name: &str, prefix: &str) -> bool {
    name.strip_prefix(prefix)
        .is_some_and(|rest| rest.is_empty() || rest.starts_with('.'))
}
