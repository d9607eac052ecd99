use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Update group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Encoder, fusion and segmentation decoder.
    Seg,
    /// Detection head.
    Dec,
    /// Discriminator.
    Dis,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Seg, Group::Dec, Group::Dis];

    pub fn name(self) -> &'static str {
        match self {
            Group::Seg => "seg",
            Group::Dec => "dec",
            Group::Dis => "dis",
        }
    }

    pub fn parse(s: &str) -> Option<Group> {
        Group::ALL.into_iter().find(|g| g.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: Group,
    pub offset: usize,
    pub len: usize,
}

/// All trainable tensors of a model, packed into one flat buffer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    specs: Vec<ParamSpec>,
    values: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor drawn from `U(-bound, bound)`; a zero bound gives zeros.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], group: Group, bound: f64, rng: &mut ChaCha8Rng) -> ParamId {
        let len: usize = shape.iter().product();
        let offset = self.values.len();
        if bound > 0.0 {
            self.values.extend((0..len).map(|_| rng.random_range(-bound..bound)));
        } else {
            self.values.resize(offset + len, 0.0);
        }
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            group,
            offset,
            len,
        });
        ParamId(self.specs.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        let s = &self.specs[id.0];
        &self.values[s.offset..s.offset + s.len]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let s = &self.specs[id.0];
        &mut self.values[s.offset..s.offset + s.len]
    }

    pub fn spec(&self, id: ParamId) -> &ParamSpec {
        &self.specs[id.0]
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.specs.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Total scalar count.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn group_len(&self, group: Group) -> usize {
        self.specs.iter().filter(|s| s.group == group).map(|s| s.len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Gradient buffer laid out like a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients {
            values: vec![0.0; params.len()],
        }
    }

    pub fn slot(&self, params: &ParamSet, id: ParamId) -> &[f64] {
        let s = params.spec(id);
        &self.values[s.offset..s.offset + s.len]
    }

    pub fn slot_mut(&mut self, params: &ParamSet, id: ParamId) -> &mut [f64] {
        let s = params.spec(id);
        &mut self.values[s.offset..s.offset + s.len]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Sum a sequence of per-sample gradients in order.
    pub fn sum(params: &ParamSet, parts: impl IntoIterator<Item = Gradients>) -> Gradients {
        let mut total = Gradients::zeros_like(params);
        for g in parts {
            total.add_assign(&g);
        }
        total
    }
}
