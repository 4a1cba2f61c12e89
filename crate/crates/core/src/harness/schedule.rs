//! Freeze schedules.

use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::Real;

/// Layers frozen until a number of completed epochs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FreezeSchedule {
    pub entries: Vec<FreezeEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreezeEntry {
    pub layer: usize,
    /// `None` keeps the layer frozen for good.
    pub until_epoch: Option<usize>,
}

impl FreezeSchedule {
    pub fn new(layers: &[usize], until_epoch: usize) -> Self {
        let until = (until_epoch > 0).then_some(until_epoch);
        Self {
            entries: layers
                .iter()
                .map(|&layer| FreezeEntry {
                    layer,
                    until_epoch: until,
                })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Sets the frozen flags scheduled for the point where `epochs_completed`
/// epochs have finished. A layer frozen until epoch 50 trains from the
/// 51st epoch on.
pub fn freeze_schedule_step<T: Real>(
    net: &mut Network<T>,
    schedule: &FreezeSchedule,
    epochs_completed: usize,
) -> Result<()> {
    for e in &schedule.entries {
        if e.layer >= net.len() {
            return Err(Error::invalid(format!(
                "freeze schedule names layer {} but the network has {} layers",
                e.layer,
                net.len()
            )));
        }
    }
    for e in &schedule.entries {
        let frozen = e.until_epoch.is_none_or(|u| epochs_completed < u);
        net.set_frozen(e.layer, frozen)?;
    }
    Ok(())
}
