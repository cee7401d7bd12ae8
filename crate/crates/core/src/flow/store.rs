/// One named array inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat storage for named parameter arrays. Layers address their arrays by
/// slot index so the whole model is one contiguous vector for the optimizer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    values: Vec<f64>,
    slots: Vec<ParamSlot>,
}

impl ParamStore {
    pub fn alloc(&mut self, name: String, shape: &[usize], mut init: impl FnMut() -> f64) -> usize {
        let offset = self.values.len();
        let len: usize = shape.iter().product();
        self.values.extend((0..len).map(|_| init()));
        self.slots.push(ParamSlot { name, offset, shape: shape.to_vec() });
        self.slots.len() - 1
    }

    pub fn get(&self, slot: usize) -> &[f64] {
        &self.values[self.slots[slot].range()]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut [f64] {
        let r = self.slots[slot].range();
        &mut self.values[r]
    }

    pub fn slot(&self, slot: usize) -> &ParamSlot {
        &self.slots[slot]
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
