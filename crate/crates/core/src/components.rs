//! Connected-component labelling of binary rasters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neighbourhood used to join pixels; serialized as the integer 4 or 8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Connectivity {
    /// Edge neighbours only.
    Four,
    /// Edge and corner neighbours.
    #[default]
    Eight,
}

impl TryFrom<u32> for Connectivity {
    type Error = Error;
    fn try_from(n: u32) -> Result<Self> {
        Connectivity::from_count(n)
    }
}

impl From<Connectivity> for u32 {
    fn from(c: Connectivity) -> u32 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::Config(format!("connectivity must be 4 or 8, got {n}"))),
        }
    }
}

/// One connected component: its pixel indices in raster order and its
/// minimal bounding box (`x1`, `y1` exclusive).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub pixels: Vec<usize>,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // keep the smaller label as root so labels follow raster order
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Labels the set pixels of `mask` (row-major, `width` wide). Components are
/// returned in raster order of their first pixel.
///
/// Two-pass union-find: the first pass links each set pixel to its already
/// visited neighbours, the second gathers pixels by root.
pub fn label(mask: &[bool], width: usize, conn: Connectivity) -> Vec<Component> {
    if width == 0 || mask.is_empty() {
        return Vec::new();
    }
    assert!(mask.len() % width == 0, "mask length is not a multiple of width");
    assert!(mask.len() < u32::MAX as usize, "raster too large to label");
    let height = mask.len() / width;
    let mut parent: Vec<u32> = (0..mask.len() as u32).collect();

    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if !mask[i] {
                continue;
            }
            if x > 0 && mask[i - 1] {
                union(&mut parent, i as u32, (i - 1) as u32);
            }
            if y > 0 {
                let up = i - width;
                if mask[up] {
                    union(&mut parent, i as u32, up as u32);
                }
                if conn == Connectivity::Eight {
                    if x > 0 && mask[up - 1] {
                        union(&mut parent, i as u32, (up - 1) as u32);
                    }
                    if x + 1 < width && mask[up + 1] {
                        union(&mut parent, i as u32, (up + 1) as u32);
                    }
                }
            }
        }
    }

    let mut slot = vec![usize::MAX; mask.len()];
    let mut out: Vec<Component> = Vec::new();
    for (i, _) in mask.iter().enumerate().filter(|(_, &on)| on) {
        let root = find(&mut parent, i as u32) as usize;
        let (x, y) = (i % width, i / width);
        if slot[root] == usize::MAX {
            slot[root] = out.len();
            out.push(Component {
                pixels: Vec::new(),
                x0: x,
                y0: y,
                x1: x + 1,
                y1: y + 1,
            });
        }
        let c = &mut out[slot[root]];
        c.pixels.push(i);
        c.x0 = c.x0.min(x);
        c.x1 = c.x1.max(x + 1);
        c.y1 = c.y1.max(y + 1);
    }
    out
}
