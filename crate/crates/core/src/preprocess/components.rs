use std::collections::VecDeque;

use crate::voxel::{neighbor_offsets, BinaryMask, Shape3};

/// 26-connected component labeling. Label 0 is background; components are
/// numbered `1..=K` in the order their first voxel appears in a Z/H/W scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub shape: Shape3,
    pub labels: Vec<u32>,
    /// `sizes[k - 1]` is the voxel count of label `k`.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn mask_of(&self, label: u32) -> BinaryMask {
        BinaryMask::new(self.shape, self.labels.iter().map(|l| *l == label).collect())
            .expect("labels share the component shape")
    }
}

pub fn connected_components_3d(m: &BinaryMask) -> Components {
    let s = m.shape();
    let data = m.data();
    let offsets = neighbor_offsets().offsets();
    let mut labels = vec![0u32; s.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..s.len() {
        if !data[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (z, y, x) = s.coords(i);
            for d in offsets {
                if let Some(j) = s.offset(z, y, x, *d) {
                    if data[j] && labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    Components { shape: s, labels, sizes }
}
