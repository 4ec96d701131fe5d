pub mod adjoint;
pub mod composite;
pub mod contraction;
pub mod device;
pub mod error;
pub mod evolve;
pub mod fit;
pub mod linalg;
pub mod objectives;
pub mod optim;
pub mod pulse;
pub mod qubit;
pub mod state;
pub mod trotter;
pub mod workflow;

pub use error::{Error, Result};
pub use composite::{assemble, dressed_spectrum, energy_tensor, static_zz, CompositeSystem, EnergyTensor, SystemOptions};
pub use device::{bind_params, extract_params, load_graph, save_graph, DeviceGraph, ParameterSet, PulseField, PulseSpec, QubitSpec};
pub use evolve::{Basis, Columns, EvolveOptions, Evolution, Simulator};
pub use linalg::{CMat, RMat, C64};
pub use objectives::{parse_gate, CompensationMode, CompensationOptions};
pub use optim::{minimize, MinimizeOptions, MinimizeResult};
pub use trotter::TrotterOrder;
pub use adjoint::GradientMode;
pub use workflow::{pattern_workflow, standard_stages, CrPair, GateProblem, WorkflowReport, WorkflowStage};
