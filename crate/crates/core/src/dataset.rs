//! The recorded flight example: six epochs of broadcaster and receiver
//! positions together with the INS drift pose that generated them.

use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    angles_to_unit_vector, unit_vector_to_doa, Agent, DoaMeasurement, FrameId, Pose, Rotation,
};
use crate::linear_system::MeasurementEpoch;
use crate::procrustes::closest_rotation;
use crate::scenario::NoiseLevel;

/// One published row.
#[derive(Debug, Clone, Copy)]
pub struct FlightRow {
    pub k: usize,
    pub p_a_global: [f64; 3],
    pub p_b_ins: [f64; 3],
    pub p_b_global: [f64; 3],
    /// INS-frame azimuth and elevation, radians, four decimals.
    pub doa: [f64; 2],
    /// Reconstructed global position of B after SDP+O+ML on a noisy draw.
    pub p_b_refined: [f64; 3],
}

pub const FLIGHT_ROWS: [FlightRow; 6] = [
    FlightRow {
        k: 1,
        p_a_global: [349.1, -924.1, 374.4],
        p_b_ins: [1039.2, 574.2, 311.3],
        p_b_global: [202.5, 561.3, 310.4],
        doa: [-1.4403, 0.0447],
        p_b_refined: [135.9, 468.16, 276.2],
    },
    FlightRow {
        k: 2,
        p_a_global: [781.0, -870.3, 372.5],
        p_b_ins: [1486.1, 519.4, 310.9],
        p_b_global: [647.3, 492.1, 309.9],
        doa: [-1.4409, 0.0474],
        p_b_refined: [583.6, 426.3, 297.9],
    },
    FlightRow {
        k: 3,
        p_a_global: [1007.0, -522.7, 373.3],
        p_b_ins: [1946.2, 458.2, 310.2],
        p_b_global: [1105.2, 416.2, 309.1],
        doa: [-1.6430, 0.0697],
        p_b_refined: [1044.8, 378.6, 319.9],
    },
    FlightRow {
        k: 4,
        p_a_global: [869.8, -91.3, 373.2],
        p_b_ins: [2140.4, 746.9, 309.8],
        p_b_global: [1308.6, 698.5, 309.2],
        doa: [-2.0459, 0.0723],
        p_b_refined: [1230.3, 672.8, 330.6],
    },
    FlightRow {
        k: 5,
        p_a_global: [431.4, 56.6, 373.1],
        p_b_ins: [2201.6, 1166.4, 308.8],
        p_b_global: [1383.2, 1115.8, 309.0],
        doa: [-2.2708, 0.0464],
        p_b_refined: [1279.0, 1093.9, 334.7],
    },
    FlightRow {
        k: 6,
        p_a_global: [33.9, -262.2, 373.6],
        p_b_ins: [2032.8, 1477.7, 310.2],
        p_b_global: [1224.5, 1432.5, 310.9],
        doa: [-2.1512, 0.0317],
        p_b_refined: [1101.3, 1400.2, 329.2],
    },
];

/// Drift rotation as published (three significant decimals, not exactly
/// orthogonal).
pub fn published_rotation() -> Matrix3<f64> {
    Matrix3::new(
        1.000, -0.032, 3.78e-5, //
        0.032, 1.000, 0.002, //
        -9.48e-5, -0.002, 1.000,
    )
}

pub fn published_translation() -> Vector3<f64> {
    Vector3::new(854.87, 6.18, 1.93)
}

/// Drift pose A1 -> B2 with the published rotation projected onto SO(3).
pub fn flight_pose() -> Pose {
    let rotation = closest_rotation(&published_rotation()).rotation;
    Pose::new(
        rotation,
        published_translation(),
        FrameId::global(),
        FrameId::ins(Agent::B),
    )
}

/// Unprojected published pose; only valid for forward evaluation.
pub fn published_pose() -> Pose {
    Pose::new(
        Rotation::new_unchecked(published_rotation()),
        published_translation(),
        FrameId::global(),
        FrameId::ins(Agent::B),
    )
}

/// One line of a measurement CSV: broadcaster position (global), receiver
/// position (INS) and the INS-frame DOA in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct MeasurementRow {
    pub k: usize,
    pub uA: f64,
    pub vA: f64,
    pub wA: f64,
    pub xB: f64,
    pub yB: f64,
    pub zB: f64,
    pub theta_rad: f64,
    pub phi_rad: f64,
}

impl MeasurementRow {
    pub fn from_epoch(e: &MeasurementEpoch) -> Self {
        Self {
            k: e.k,
            uA: e.p_a_global.x,
            vA: e.p_a_global.y,
            wA: e.p_a_global.z,
            xB: e.p_b_local.x,
            yB: e.p_b_local.y,
            zB: e.p_b_local.z,
            theta_rad: e.doa_ins.azimuth,
            phi_rad: e.doa_ins.elevation,
        }
    }

    pub fn to_epoch(&self) -> Result<MeasurementEpoch> {
        let e = MeasurementEpoch {
            k: self.k,
            p_a_global: Vector3::new(self.uA, self.vA, self.wA),
            p_b_local: Vector3::new(self.xB, self.yB, self.zB),
            doa_ins: DoaMeasurement::new(
                self.theta_rad,
                self.phi_rad,
                FrameId::ins(Agent::B),
                self.k,
            ),
        };
        if !e.is_finite() {
            return Err(Error::InvalidInput(format!(
                "epoch {}: non-finite value",
                self.k
            )));
        }
        if !e.doa_ins.in_range() {
            return Err(Error::InvalidInput(format!(
                "epoch {}: DOA angles out of range",
                self.k
            )));
        }
        Ok(e)
    }
}

/// Parses a measurement CSV with header `k,uA,vA,wA,xB,yB,zB,theta_rad,phi_rad`.
pub fn read_measurements<R: Read>(reader: R) -> Result<Vec<MeasurementEpoch>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<MeasurementRow>() {
        out.push(row?.to_epoch()?);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

pub fn write_measurements<W: Write>(writer: W, epochs: &[MeasurementEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in epochs {
        w.serialize(MeasurementRow::from_epoch(e))?;
    }
    w.flush()?;
    Ok(())
}

/// The recorded flight as INS-frame epochs.
pub fn flight_epochs() -> Vec<MeasurementEpoch> {
    FLIGHT_ROWS
        .iter()
        .map(|r| MeasurementEpoch {
            k: r.k,
            p_a_global: Vector3::from(r.p_a_global),
            p_b_local: Vector3::from(r.p_b_ins),
            doa_ins: DoaMeasurement::new(r.doa[0], r.doa[1], FrameId::ins(Agent::B), r.k),
        })
        .collect()
}

/// Adds seeded Gaussian noise to every azimuth and elevation. Angles are
/// renormalised through the unit vector, so elevations stay in range.
pub fn perturb_epochs(
    epochs: &[MeasurementEpoch],
    noise: &NoiseLevel,
    seed: u64,
) -> Result<Vec<MeasurementEpoch>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    epochs
        .iter()
        .map(|e| {
            let da: f64 = StandardNormal.sample(&mut rng);
            let de: f64 = StandardNormal.sample(&mut rng);
            let u = angles_to_unit_vector(
                e.doa_ins.azimuth + noise.sigma_azimuth * da,
                e.doa_ins.elevation + noise.sigma_elevation * de,
            );
            Ok(MeasurementEpoch {
                doa_ins: unit_vector_to_doa(&u, e.doa_ins.frame, e.k)?,
                ..*e
            })
        })
        .collect()
}

/// Ground truth for scoring a solve of a measurement CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// True global receiver positions, one per epoch.
    #[serde(default)]
    pub p_global: Vec<Vector3<f64>>,
}

impl TruthFile {
    pub fn flight() -> Self {
        Self {
            rotation: *flight_pose().rotation.matrix(),
            translation: published_translation(),
            p_global: FLIGHT_ROWS
                .iter()
                .map(|r| Vector3::from(r.p_b_global))
                .collect(),
        }
    }
}
