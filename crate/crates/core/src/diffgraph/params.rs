use serde::{Deserialize, Serialize};

/// One named block inside a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered description of how a flat vector splits into matrices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a `rows x cols` block and returns it.
    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Segment {
        let seg = Segment {
            name: name.into(),
            offset: self.total,
            rows,
            cols,
        };
        self.total += seg.len();
        self.segments.push(seg.clone());
        seg
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn find(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Flat parameter values together with their (fixed) layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: ParamLayout,
}

impl ParamVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    /// Panics if `values` does not match the layout length.
    pub fn from_values(layout: ParamLayout, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), layout.len(), "parameter count does not match layout");
        Self { values, layout }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
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

    pub fn segment_values(&self, seg: &Segment) -> &[f64] {
        &self.values[seg.offset..seg.offset + seg.len()]
    }

    pub fn segment_values_mut(&mut self, seg: &Segment) -> &mut [f64] {
        &mut self.values[seg.offset..seg.offset + seg.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets_are_contiguous() {
        let mut l = ParamLayout::new();
        let a = l.push("w", 3, 4);
        let b = l.push("b", 1, 4);
        assert_eq!(a.offset, 0);
        assert_eq!(b.offset, 12);
        assert_eq!(l.len(), 16);
        assert_eq!(l.segments().iter().map(Segment::len).sum::<usize>(), l.len());
        assert_eq!(l.find("b"), Some(&b));
        let p = ParamVector::zeros(l);
        assert_eq!(p.len(), 16);
    }
}
