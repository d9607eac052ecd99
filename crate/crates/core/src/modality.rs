//! Non-contrast modalities and contrast-enhanced phases, and subsets of them.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, UalError};
use crate::grid::Grid;
use crate::phantom::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    T1,
    T2,
    Dwi,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::T1, Modality::T2, Modality::Dwi];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::T1 => "t1",
            Modality::T2 => "t2",
            Modality::Dwi => "dwi",
        }
    }

    pub fn plane(self, sample: &Sample) -> &Grid {
        match self {
            Modality::T1 => &sample.t1,
            Modality::T2 => &sample.t2,
            Modality::Dwi => &sample.dwi,
        }
    }

    /// The two other modalities whose edge dissimilarity is injected into this channel.
    pub fn edge_pair(self) -> (Modality, Modality) {
        match self {
            Modality::T1 => (Modality::T2, Modality::Dwi),
            Modality::T2 => (Modality::T1, Modality::Dwi),
            Modality::Dwi => (Modality::T1, Modality::T2),
        }
    }
}

impl FromStr for Modality {
    type Err = UalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "t1" | "t1fs" => Ok(Modality::T1),
            "t2" | "t2fs" => Ok(Modality::T2),
            "dwi" | "d" => Ok(Modality::Dwi),
            other => Err(UalError::Config(format!("unknown modality {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Arterial,
    PortalVenous,
    Delay,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Arterial, Phase::PortalVenous, Phase::Delay];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Arterial => "a",
            Phase::PortalVenous => "pv",
            Phase::Delay => "delay",
        }
    }

    pub fn plane(self, sample: &Sample) -> &Grid {
        match self {
            Phase::Arterial => &sample.cemri_arterial,
            Phase::PortalVenous => &sample.cemri_pv,
            Phase::Delay => &sample.cemri_delay,
        }
    }
}

impl FromStr for Phase {
    type Err = UalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" | "arterial" => Ok(Phase::Arterial),
            "pv" | "portal" | "portal-venous" => Ok(Phase::PortalVenous),
            "d" | "delay" => Ok(Phase::Delay),
            other => Err(UalError::Config(format!("unknown phase {other:?}"))),
        }
    }
}

/// A nonempty subset of three items, kept as presence flags in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Combo<T> {
    flags: [bool; 3],
    _kind: std::marker::PhantomData<T>,
}

pub type ModalityCombo = Combo<Modality>;
pub type PhaseCombo = Combo<Phase>;

pub trait ComboItem: Copy + FromStr<Err = UalError> {
    const ALL: [Self; 3];
    fn position(self) -> usize;
    fn label(self) -> &'static str;
}

impl ComboItem for Modality {
    const ALL: [Self; 3] = Modality::ALL;
    fn position(self) -> usize {
        self.index()
    }
    fn label(self) -> &'static str {
        self.name()
    }
}

impl ComboItem for Phase {
    const ALL: [Self; 3] = Phase::ALL;
    fn position(self) -> usize {
        self.index()
    }
    fn label(self) -> &'static str {
        self.name()
    }
}

impl<T: ComboItem> Combo<T> {
    pub fn all() -> Self {
        Combo {
            flags: [true; 3],
            _kind: std::marker::PhantomData,
        }
    }

    pub fn from_items(items: &[T]) -> Result<Self> {
        let mut flags = [false; 3];
        for it in items {
            if flags[it.position()] {
                return Err(UalError::Config(format!("{} listed twice", it.label())));
            }
            flags[it.position()] = true;
        }
        Self::from_flags(flags)
    }

    pub fn from_flags(flags: [bool; 3]) -> Result<Self> {
        if !flags.iter().any(|&f| f) {
            return Err(UalError::Config("combination must contain at least one entry".into()));
        }
        Ok(Combo {
            flags,
            _kind: std::marker::PhantomData,
        })
    }

    pub fn contains(&self, item: T) -> bool {
        self.flags[item.position()]
    }

    pub fn flags(&self) -> [bool; 3] {
        self.flags
    }

    pub fn items(&self) -> Vec<T> {
        T::ALL.into_iter().filter(|&t| self.contains(t)).collect()
    }

    pub fn len(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The six proper nonempty subsets (three singletons, three pairs) followed by the full set.
    pub fn grid() -> Vec<Self> {
        let mut out = Vec::with_capacity(7);
        for i in 0..3 {
            let mut f = [false; 3];
            f[i] = true;
            out.push(Self::from_flags(f).unwrap());
        }
        for skip in (0..3).rev() {
            let mut f = [true; 3];
            f[skip] = false;
            out.push(Self::from_flags(f).unwrap());
        }
        out.push(Self::all());
        out
    }
}

impl<T: ComboItem> FromStr for Combo<T> {
    type Err = UalError;

    fn from_str(s: &str) -> Result<Self> {
        let items = s
            .split([',', '+'])
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<T>>>()?;
        Self::from_items(&items)
    }
}

impl<T: ComboItem> fmt::Display for Combo<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.items().into_iter().map(ComboItem::label).collect();
        write!(f, "{}", names.join(","))
    }
}
