//! Stock interposer layouts.

use serde::{Deserialize, Serialize};

use crate::chiplet::ChipletId;

use super::Link;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Every third-party chiplet wired straight to every integrator.
    Star,
    /// Row-major 2D grid over all chiplets in id order.
    Mesh,
    /// Fully connected integrators; each third-party chiplet hangs off two of them.
    Clique,
}

impl Layout {
    pub fn links(self, integrators: &[ChipletId], third_party: &[ChipletId]) -> Vec<Link> {
        match self {
            Layout::Star => star_links(integrators, third_party),
            Layout::Mesh => {
                let mut all: Vec<ChipletId> =
                    integrators.iter().chain(third_party).copied().collect();
                all.sort_unstable();
                mesh_links(&all)
            }
            Layout::Clique => clique_links(integrators, third_party),
        }
    }
}

pub fn star_links(integrators: &[ChipletId], third_party: &[ChipletId]) -> Vec<Link> {
    integrators
        .iter()
        .flat_map(|&i| third_party.iter().map(move |&t| Link::new(i, t)))
        .collect()
}

pub fn mesh_links(ids: &[ChipletId]) -> Vec<Link> {
    let n = ids.len();
    if n < 2 {
        return Vec::new();
    }
    let cols = (n as f64).sqrt().ceil() as usize;
    let mut links = Vec::new();
    for (i, &id) in ids.iter().enumerate() {
        if (i + 1) % cols != 0 && i + 1 < n {
            links.push(Link::new(id, ids[i + 1]));
        }
        if i + cols < n {
            links.push(Link::new(id, ids[i + cols]));
        }
    }
    links
}

pub fn clique_links(integrators: &[ChipletId], third_party: &[ChipletId]) -> Vec<Link> {
    let mut links = Vec::new();
    for (i, &a) in integrators.iter().enumerate() {
        for &b in &integrators[i + 1..] {
            links.push(Link::new(a, b));
        }
    }
    let n = integrators.len();
    if n == 0 {
        return links;
    }
    for (k, &t) in third_party.iter().enumerate() {
        links.push(Link::new(t, integrators[k % n]));
        if n > 1 {
            links.push(Link::new(t, integrators[(k + 1) % n]));
        }
    }
    links
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(star_links(&[1, 2, 3], &[10, 11]).len(), 6);
        assert_eq!(clique_links(&[1, 2, 3, 4], &[10, 11]).len(), 6 + 4);
        // 3x3 grid: 6 horizontal + 6 vertical
        assert_eq!(mesh_links(&(1..=9).collect::<Vec<_>>()).len(), 12);
    }

    #[test]
    fn partial_mesh_row() {
        // 5 nodes, 3 columns: 0-1-2 / 3-4
        let links = mesh_links(&[1, 2, 3, 4, 5]);
        assert!(links.contains(&Link::new(4, 5)));
        assert!(links.contains(&Link::new(2, 5)));
        assert!(!links.contains(&Link::new(3, 4)));
        assert_eq!(links.len(), 5);
    }
}
