use std::ops::Index;
use std::rc::Rc;

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered collection of learned tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Rc<Tensor>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(Rc::new(value));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter().map(|t| t.as_ref()))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Rc::make_mut(&mut self.tensors[id.0])
    }

    /// Replaces a parameter; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(self.tensors[id.0].shape(), value.shape(), "parameter {} changes shape", self.names[id.0]);
        self.tensors[id.0] = Rc::new(value);
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Records every parameter on `graph`, as gradient leaves when `trainable`.
    pub fn bind<'g>(&self, graph: &'g Graph, trainable: bool) -> Bound<'g> {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { graph.leaf_rc(Rc::clone(t)) } else { graph.constant_rc(Rc::clone(t)) })
            .collect();
        Bound { vars }
    }
}

/// Parameters of one [`ParamSet`] recorded on a graph.
pub struct Bound<'g> {
    vars: Vec<Var<'g>>,
}

impl<'g> Bound<'g> {
    pub fn vars(&self) -> &[Var<'g>] {
        &self.vars
    }

    /// Gradients of `output` for every parameter, zeros where it does not depend on one.
    pub fn grads(&self, output: Var<'g>) -> Vec<Tensor> {
        output.graph().grad(output, &self.vars)
    }
}

impl<'g> Index<ParamId> for Bound<'g> {
    type Output = Var<'g>;
    fn index(&self, id: ParamId) -> &Var<'g> {
        &self.vars[id.0]
    }
}
