use crate::error::{Error, Result};

/// Label value marking pixels excluded from loss and metrics.
pub const IGNORE_INDEX: u8 = 255;

/// Per-pixel class indices, shape `[batch, height, width]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    shape: [usize; 3],
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(shape: [usize; 3], data: Vec<u8>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(
                "label_map",
                format!("{} labels for shape {:?}", data.len(), shape),
            ));
        }
        Ok(LabelMap { shape, data })
    }

    pub fn filled(shape: [usize; 3], value: u8) -> Self {
        LabelMap {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn at(&self, n: usize, y: usize, x: usize) -> u8 {
        self.data[(n * self.shape[1] + y) * self.shape[2] + x]
    }

    pub fn set(&mut self, n: usize, y: usize, x: usize, v: u8) {
        let i = (n * self.shape[1] + y) * self.shape[2] + x;
        self.data[i] = v;
    }

    /// Stack single-image maps along the batch axis.
    pub fn stack(items: &[LabelMap]) -> Result<Self> {
        let Some(first) = items.first() else {
            return Err(Error::shape("label_map", "no label maps to stack"));
        };
        let mut data = Vec::new();
        let mut n = 0;
        for it in items {
            if it.shape[1..] != first.shape[1..] {
                return Err(Error::shape(
                    "label_map",
                    format!("{:?} vs {:?}", it.shape, first.shape),
                ));
            }
            n += it.shape[0];
            data.extend_from_slice(&it.data);
        }
        Ok(LabelMap {
            shape: [n, first.shape[1], first.shape[2]],
            data,
        })
    }

    /// Check every label is a class below `classes` or the ignore index.
    pub fn validate(&self, classes: usize, ignore: u8) -> Result<()> {
        match self
            .data
            .iter()
            .enumerate()
            .find(|(_, &l)| l != ignore && l as usize >= classes)
        {
            Some((index, &label)) => Err(Error::BadLabel {
                label,
                index,
                classes,
            }),
            None => Ok(()),
        }
    }
}
