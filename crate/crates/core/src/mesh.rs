//! Nested two-scale structured quadrilateral mesh on the unit square.
//!
//! The fine grid has `n_fine × n_fine` square cells and `(n_fine + 1)²` nodes;
//! the coarse grid groups `cells_per_coarse × cells_per_coarse` fine cells into
//! one coarse element. Nodes, cells and coarse elements are all numbered
//! row-major with the `x` index running fastest.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TwoScaleMesh {
    n_fine: usize,
    n_coarse: usize,
    cells_per_coarse: usize,
}

/// Inclusive rectangle of fine-grid node indices `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeRect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl NodeRect {
    pub fn width(&self) -> usize {
        self.x1 + 1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 + 1 - self.y0
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            self.width() * self.height()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.x1 < self.x0 || self.y1 < self.y0
    }

    pub fn contains(&self, ix: usize, iy: usize) -> bool {
        ix >= self.x0 && ix <= self.x1 && iy >= self.y0 && iy <= self.y1
    }

    /// Position of node `(ix, iy)` in the rectangle's own row-major order.
    pub fn local_index(&self, ix: usize, iy: usize) -> Option<usize> {
        self.contains(ix, iy)
            .then(|| (iy - self.y0) * self.width() + (ix - self.x0))
    }

    pub fn intersect(&self, other: &NodeRect) -> Option<NodeRect> {
        let r = NodeRect {
            x0: self.x0.max(other.x0),
            x1: self.x1.min(other.x1),
            y0: self.y0.max(other.y0),
            y1: self.y1.min(other.y1),
        };
        (!r.is_empty()).then_some(r)
    }

    /// Rectangle shrunk by one node on every side; empty when too thin.
    pub fn shrink(&self) -> Option<NodeRect> {
        if self.width() < 3 || self.height() < 3 {
            return None;
        }
        Some(NodeRect {
            x0: self.x0 + 1,
            x1: self.x1 - 1,
            y0: self.y0 + 1,
            y1: self.y1 - 1,
        })
    }
}

impl TwoScaleMesh {
    pub fn new(n_fine: usize, n_coarse: usize) -> Result<Self> {
        if n_coarse == 0 || n_fine < n_coarse {
            return Err(Error::Config(format!(
                "need n_fine >= n_coarse >= 1, got n_fine={n_fine}, n_coarse={n_coarse}"
            )));
        }
        if n_fine % n_coarse != 0 {
            return Err(Error::Config(format!(
                "n_coarse={n_coarse} does not divide n_fine={n_fine}"
            )));
        }
        Ok(Self {
            n_fine,
            n_coarse,
            cells_per_coarse: n_fine / n_coarse,
        })
    }

    pub fn n_fine(&self) -> usize {
        self.n_fine
    }

    pub fn n_coarse(&self) -> usize {
        self.n_coarse
    }

    pub fn cells_per_coarse(&self) -> usize {
        self.cells_per_coarse
    }

    /// Fine mesh size `h`.
    pub fn h(&self) -> f64 {
        1.0 / self.n_fine as f64
    }

    /// Coarse mesh size `H`.
    pub fn coarse_h(&self) -> f64 {
        1.0 / self.n_coarse as f64
    }

    pub fn nodes_per_side(&self) -> usize {
        self.n_fine + 1
    }

    pub fn num_dofs(&self) -> usize {
        self.nodes_per_side() * self.nodes_per_side()
    }

    pub fn num_cells(&self) -> usize {
        self.n_fine * self.n_fine
    }

    /// Number of coarse elements `N`.
    pub fn num_elements(&self) -> usize {
        self.n_coarse * self.n_coarse
    }

    #[inline]
    pub fn node(&self, ix: usize, iy: usize) -> usize {
        iy * self.nodes_per_side() + ix
    }

    #[inline]
    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % self.nodes_per_side(), node / self.nodes_per_side())
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        let (ix, iy) = self.node_ij(node);
        (ix as f64 * self.h(), iy as f64 * self.h())
    }

    #[inline]
    pub fn cell(&self, cx: usize, cy: usize) -> usize {
        cy * self.n_fine + cx
    }

    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let (cx, cy) = (cell % self.n_fine, cell / self.n_fine);
        ((cx as f64 + 0.5) * self.h(), (cy as f64 + 0.5) * self.h())
    }

    /// Nodes of fine cell `(cx, cy)` in counter-clockwise order starting at
    /// the lower-left corner.
    #[inline]
    pub fn cell_nodes(&self, cx: usize, cy: usize) -> [usize; 4] {
        let n0 = self.node(cx, cy);
        let s = self.nodes_per_side();
        [n0, n0 + 1, n0 + s + 1, n0 + s]
    }

    pub fn element(&self, ex: usize, ey: usize) -> usize {
        ey * self.n_coarse + ex
    }

    pub fn element_ij(&self, element: usize) -> (usize, usize) {
        (element % self.n_coarse, element / self.n_coarse)
    }

    pub fn element_of_cell(&self, cell: usize) -> usize {
        let (cx, cy) = (cell % self.n_fine, cell / self.n_fine);
        self.element(cx / self.cells_per_coarse, cy / self.cells_per_coarse)
    }

    /// Fine cells of a coarse element, row-major.
    pub fn element_cells(&self, element: usize) -> Vec<usize> {
        let (ex, ey) = self.element_ij(element);
        let c = self.cells_per_coarse;
        let mut cells = Vec::with_capacity(c * c);
        for cy in ey * c..(ey + 1) * c {
            for cx in ex * c..(ex + 1) * c {
                cells.push(self.cell(cx, cy));
            }
        }
        cells
    }

    /// Closed node rectangle of a coarse element.
    pub fn element_rect(&self, element: usize) -> NodeRect {
        let (ex, ey) = self.element_ij(element);
        let c = self.cells_per_coarse;
        NodeRect {
            x0: ex * c,
            x1: (ex + 1) * c,
            y0: ey * c,
            y1: (ey + 1) * c,
        }
    }

    /// Local-to-global fine node map of a coarse element (row-major over the
    /// element's closed node rectangle).
    pub fn element_nodes(&self, element: usize) -> Vec<usize> {
        self.rect_nodes(&self.element_rect(element))
    }

    pub fn rect_nodes(&self, rect: &NodeRect) -> Vec<usize> {
        let mut nodes = Vec::with_capacity(rect.len());
        for iy in rect.y0..=rect.y1 {
            for ix in rect.x0..=rect.x1 {
                nodes.push(self.node(ix, iy));
            }
        }
        nodes
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let (ix, iy) = self.node_ij(node);
        ix == 0 || iy == 0 || ix == self.n_fine || iy == self.n_fine
    }

    /// Fine nodes on `∂Ω`, ascending.
    pub fn dirichlet_dofs(&self) -> Vec<usize> {
        (0..self.num_dofs())
            .filter(|&n| self.is_boundary_node(n))
            .collect()
    }

    /// Fine nodes strictly inside `Ω`, ascending.
    pub fn free_dofs(&self) -> Vec<usize> {
        (0..self.num_dofs())
            .filter(|&n| !self.is_boundary_node(n))
            .collect()
    }

    /// Rectangle of all interior nodes.
    pub fn free_rect(&self) -> NodeRect {
        NodeRect {
            x0: 1,
            x1: self.n_fine - 1,
            y0: 1,
            y1: self.n_fine - 1,
        }
    }

    /// Oversampled patch `K_i^m`: the block of coarse elements within
    /// Chebyshev distance `m` of element `i`, clipped to the domain.
    pub fn patch(&self, element: usize, layers: usize) -> Result<Patch> {
        if element >= self.num_elements() {
            return Err(Error::Index {
                what: "coarse element",
                index: element,
                limit: self.num_elements(),
            });
        }
        let (ex, ey) = self.element_ij(element);
        let last = self.n_coarse - 1;
        let c = self.cells_per_coarse;
        let ex0 = ex.saturating_sub(layers);
        let ex1 = (ex + layers).min(last);
        let ey0 = ey.saturating_sub(layers);
        let ey1 = (ey + layers).min(last);
        Ok(Patch {
            center: element,
            layers,
            n_coarse: self.n_coarse,
            elements_x: (ex0, ex1),
            elements_y: (ey0, ey1),
            closed: NodeRect {
                x0: ex0 * c,
                x1: (ex1 + 1) * c,
                y0: ey0 * c,
                y1: (ey1 + 1) * c,
            },
        })
    }
}

/// Oversampled domain `K_i^m` together with its fine-node sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patch {
    center: usize,
    layers: usize,
    n_coarse: usize,
    elements_x: (usize, usize),
    elements_y: (usize, usize),
    closed: NodeRect,
}

impl Patch {
    pub fn center_element(&self) -> usize {
        self.center
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Coarse elements of the patch, ascending.
    pub fn element_set(&self) -> Vec<usize> {
        let mut set = Vec::new();
        for ey in self.elements_y.0..=self.elements_y.1 {
            for ex in self.elements_x.0..=self.elements_x.1 {
                set.push(ey * self.n_coarse + ex);
            }
        }
        set
    }

    pub fn num_elements(&self) -> usize {
        (self.elements_x.1 + 1 - self.elements_x.0) * (self.elements_y.1 + 1 - self.elements_y.0)
    }

    pub fn contains_element(&self, element: usize) -> bool {
        let (ex, ey) = (element % self.n_coarse, element / self.n_coarse);
        ex >= self.elements_x.0
            && ex <= self.elements_x.1
            && ey >= self.elements_y.0
            && ey <= self.elements_y.1
    }

    /// Whether the patch covers the whole domain.
    pub fn is_saturated(&self) -> bool {
        self.num_elements() == self.n_coarse * self.n_coarse
    }

    /// Node rectangle of the closed patch.
    pub fn closed_rect(&self) -> NodeRect {
        self.closed
    }

    /// Node rectangle strictly inside the patch; `None` only for degenerate
    /// single-cell patches.
    pub fn interior_rect(&self) -> Option<NodeRect> {
        self.closed.shrink()
    }

    pub fn all_dofs(&self, mesh: &TwoScaleMesh) -> Vec<usize> {
        mesh.rect_nodes(&self.closed)
    }

    /// Nodes carrying unknowns of `V_0(K_i^m)`: zero trace on `∂K_i^m`
    /// (which includes any part of `∂Ω`).
    pub fn interior_dofs(&self, mesh: &TwoScaleMesh) -> Vec<usize> {
        self.interior_rect()
            .map(|r| mesh.rect_nodes(&r))
            .unwrap_or_default()
    }
}
