use std::collections::BTreeMap;

use super::adam::GradSet;
use super::params::ParamSet;
use super::scalar::Scalar;
use super::tape::{Grads, NodeId, Tape};

/// Mapping from parameter names to their leaf nodes on a tape.
///
/// Frozen parameters are bound as constant leaves, so their gradients are
/// identically zero by construction.
pub struct Binding {
    map: BTreeMap<String, NodeId>,
}

pub fn bind_params<F: Scalar>(tape: &mut Tape<F>, params: &ParamSet<F>) -> Binding {
    let mut map = BTreeMap::new();
    for (name, entry) in params.iter() {
        let id = tape.leaf(entry.tensor.clone(), !entry.frozen);
        map.insert(name.clone(), id);
    }
    Binding { map }
}

impl Binding {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter `{name}`"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NodeId)> {
        self.map.iter()
    }
}

/// Pull gradients for every bound parameter into a named [`GradSet`].
pub fn collect_grads(binding: &Binding, grads: &Grads<f32>, out: &mut GradSet) {
    for (name, &id) in binding.iter() {
        if let Some(g) = grads.get_ref(id) {
            out.accumulate(name, g);
        }
    }
}
