use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::TargetHint;
use crate::kernel::VectorWidths;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeviceId(pub u32);

impl DeviceId {
    pub const HOST: DeviceId = DeviceId(0);
}

/// Identifies one address space. Copies of tracked buffers live per space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpaceId(pub u32);

impl SpaceId {
    pub const HOST: SpaceId = SpaceId(0);
}

impl fmt::Display for SpaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "as{}", self.0)
    }
}

/// A simulated compute unit. Every device runs kernels with the same
/// interpreter; the model only decides where buffer copies live and what
/// `vector_length` reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub id: DeviceId,
    pub name: String,
    pub space: SpaceId,
    pub widths: VectorWidths,
    /// The hint that selects this device when no override applies.
    pub hint: Option<TargetHint>,
}

/// The set of devices a graph can be mapped onto. Device 0 is the host.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    devices: Vec<DeviceModel>,
}

impl Default for Machine {
    /// A host, one GPU-like device and one vector unit with 256-bit lanes,
    /// each in its own address space.
    fn default() -> Self {
        Machine {
            devices: vec![
                DeviceModel {
                    id: DeviceId(0),
                    name: "host".into(),
                    space: SpaceId(0),
                    widths: VectorWidths::scalar(),
                    hint: Some(TargetHint::Cpu),
                },
                DeviceModel {
                    id: DeviceId(1),
                    name: "gpu0".into(),
                    space: SpaceId(1),
                    widths: VectorWidths::scalar(),
                    hint: Some(TargetHint::Gpu),
                },
                DeviceModel {
                    id: DeviceId(2),
                    name: "vec0".into(),
                    space: SpaceId(2),
                    widths: VectorWidths::from_lane_bits(256),
                    hint: Some(TargetHint::Vector),
                },
            ],
        }
    }
}

impl Machine {
    /// A machine with only the host.
    pub fn host_only() -> Self {
        let mut m = Machine::default();
        m.devices.truncate(1);
        m
    }

    /// Adds a device with its own address space and returns its id.
    pub fn add_device(&mut self, name: impl Into<String>, widths: VectorWidths, hint: Option<TargetHint>) -> DeviceId {
        let id = DeviceId(self.devices.len() as u32);
        let space = SpaceId(self.devices.iter().map(|d| d.space.0).max().unwrap_or(0) + 1);
        self.devices.push(DeviceModel {
            id,
            name: name.into(),
            space,
            widths,
            hint,
        });
        id
    }

    pub fn devices(&self) -> &[DeviceModel] {
        &self.devices
    }

    pub fn device(&self, id: DeviceId) -> &DeviceModel {
        &self.devices[id.0 as usize]
    }

    pub fn host(&self) -> &DeviceModel {
        &self.devices[0]
    }

    pub fn by_name(&self, name: &str) -> Option<&DeviceModel> {
        self.devices.iter().find(|d| d.name == name)
    }

    /// First device registered for `hint`.
    pub fn for_hint(&self, hint: TargetHint) -> Option<&DeviceModel> {
        self.devices.iter().find(|d| d.hint == Some(hint))
    }

    pub fn space_name(&self, space: SpaceId) -> String {
        self.devices
            .iter()
            .find(|d| d.space == space)
            .map_or_else(|| space.to_string(), |d| d.name.clone())
    }
}
