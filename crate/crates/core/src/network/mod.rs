//! Full network assembly, parameter accounting and receptive-field analysis.

mod analysis;
mod model;
mod report;
mod variant;

pub use analysis::{
    conv_receptive_field, effective_receptive_field, empirical_receptive_field, factorization_savings,
    receptive_field_summary, Footprint, Replacement, RfStage, Savings,
};
pub use model::{argmax, Network, IMAGE_CHANNELS, OUTPUT_STRIDE};
pub use report::{published_size, LayerRow, LayerTable, ParamReport, ParamRow, PublishedSize};
pub use variant::VariantSpec;

use crate::scalar::Scalar;

impl<T: Scalar> Network<T> {
    pub fn count_parameters(&self) -> ParamReport {
        ParamReport::from_network(self)
    }

    pub fn layer_table(&self) -> LayerTable {
        LayerTable::from_network(self)
    }
}
