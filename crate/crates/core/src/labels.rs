use crate::error::{Error, Result};

pub const DEFAULT_IGNORE_INDEX: u32 = 255;

/// Integer class raster of shape `(n, h, w)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    n: usize,
    h: usize,
    w: usize,
    data: Vec<u32>,
    ignore_index: u32,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u32>) -> Result<Self> {
        Self::with_ignore(n, h, w, data, DEFAULT_IGNORE_INDEX)
    }

    pub fn with_ignore(n: usize, h: usize, w: usize, data: Vec<u32>, ignore_index: u32) -> Result<Self> {
        if data.len() != n * h * w {
            return Err(Error::shape("LabelMap::new", "length", n * h * w, data.len()));
        }
        Ok(Self {
            n,
            h,
            w,
            data,
            ignore_index,
        })
    }

    pub fn filled(n: usize, h: usize, w: usize, value: u32) -> Self {
        Self {
            n,
            h,
            w,
            data: vec![value; n * h * w],
            ignore_index: DEFAULT_IGNORE_INDEX,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.h, self.w)
    }

    pub fn ignore_index(&self) -> u32 {
        self.ignore_index
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, n: usize, y: usize, x: usize) -> u32 {
        self.data[(n * self.h + y) * self.w + x]
    }

    pub fn item(&self, n: usize) -> &[u32] {
        let p = self.h * self.w;
        &self.data[n * p..(n + 1) * p]
    }

    /// Every value is below `classes` or equals the ignore index.
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .find(|&&v| v != self.ignore_index && v as usize >= classes)
        {
            Some(&v) => Err(Error::ClassOutOfRange {
                value: v as usize,
                classes,
            }),
            None => Ok(()),
        }
    }

    pub fn stack(items: &[LabelMap]) -> Result<LabelMap> {
        let first = items.first().ok_or_else(|| Error::Empty("stack of zero label maps".into()))?;
        let mut data = Vec::new();
        let mut n = 0;
        for m in items {
            if (m.h, m.w) != (first.h, first.w) {
                return Err(Error::shape("LabelMap::stack", "height", first.h, m.h));
            }
            n += m.n;
            data.extend_from_slice(&m.data);
        }
        Ok(LabelMap {
            n,
            h: first.h,
            w: first.w,
            data,
            ignore_index: first.ignore_index,
        })
    }
}
