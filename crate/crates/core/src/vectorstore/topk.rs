/// Bounded collector of the `k` smallest `(distance, index)` pairs under the
/// lexicographic order. Insertion order does not affect the result.
#[derive(Debug, Clone)]
pub(crate) struct TopK {
    k: usize,
    items: Vec<(f32, u32)>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    #[inline]
    fn less(a: (f32, u32), b: (f32, u32)) -> bool {
        a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
    }

    /// Largest distance a new candidate may have to be admitted.
    #[inline]
    pub fn bound(&self) -> f32 {
        if self.items.len() < self.k {
            f32::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    #[inline]
    pub fn push(&mut self, distance: f32, index: u32) {
        if self.k == 0 {
            return;
        }
        let cand = (distance, index);
        if self.items.len() == self.k {
            if !Self::less(cand, self.items[self.k - 1]) {
                return;
            }
            self.items.pop();
        }
        let pos = self
            .items
            .iter()
            .position(|&it| Self::less(cand, it))
            .unwrap_or(self.items.len());
        self.items.insert(pos, cand);
    }


    pub fn into_sorted(self) -> Vec<(f32, u32)> {
        self.items
    }
}
