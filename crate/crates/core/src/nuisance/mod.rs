//! Nuisance models: propensity, mediator law and outcome means.

mod mean;
mod mediator;
mod propensity;

pub use mean::{fit_mean, LinearMean, MeanSet, OutcomeMean};
pub use mediator::{
    density_eval, fit_bernoulli_mediator_law, fit_mediator_law, fit_mediator_law_dropping, sample_conditional, Arm,
    BernoulliMediatorLaw, ConditionalLaw, GaussianMediatorLaw, MediatorLaw,
};
pub use propensity::{constant_propensity, fit_binary_glm, fit_propensity, Link, Propensity, PropensityModel};

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// How the mediator law is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MediatorMode {
    Gaussian,
    Bernoulli(Link),
    /// Bernoulli with a logit link when every mediator column is 0/1, Gaussian otherwise.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub link: Link,
    pub clip: f64,
    pub mediator: MediatorMode,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            link: Link::Probit,
            clip: 0.01,
            mediator: MediatorMode::Auto,
        }
    }
}

/// Deliberate misspecification of one bundle component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Misspecification {
    /// Propensity refitted with the other link.
    WrongLink,
    /// Outcome means refitted without the confounders.
    WrongOutcome,
    /// Mediator `j` regressed on the confounders only.
    WrongMediatorJ(usize),
    /// Intercept of mediator `j` shifted by one residual standard deviation.
    WrongMediatorShift(usize),
}

impl Misspecification {
    /// Parses `wrong_link`, `wrong_outcome`, `wrong_mediator_j:<j>`, `wrong_mediator_shift:<j>`.
    pub fn parse(tag: &str) -> Result<Self> {
        let (head, arg) = match tag.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (tag, None),
        };
        let idx = || -> Result<usize> {
            arg.and_then(|a| a.trim().parse().ok())
                .ok_or_else(|| Error::Validation(format!("scenario `{tag}` needs a mediator index")))
        };
        match head.trim() {
            "wrong_link" => Ok(Misspecification::WrongLink),
            "wrong_outcome" => Ok(Misspecification::WrongOutcome),
            "wrong_mediator_j" => Ok(Misspecification::WrongMediatorJ(idx()?)),
            "wrong_mediator_shift" => Ok(Misspecification::WrongMediatorShift(idx()?)),
            _ => Err(Error::Validation(format!("unknown scenario tag `{tag}`"))),
        }
    }
}

/// Fitted nuisance components sharing one dataset shape.
pub struct NuisanceBundle {
    pub propensity: Box<dyn Propensity>,
    pub mediators: Box<dyn MediatorLaw>,
    pub means: BTreeMap<MeanSet, Box<dyn OutcomeMean>>,
    pub options: FitOptions,
    /// When set, outcome means are fitted without the confounders.
    pub drop_conf_in_means: bool,
}

impl core::fmt::Debug for NuisanceBundle {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("NuisanceBundle")
            .field("mediator_dim", &self.mediators.dim())
            .field("means", &self.means.keys().collect::<Vec<_>>())
            .field("options", &self.options)
            .finish()
    }
}

impl NuisanceBundle {
    /// Fits the propensity, the mediator law and one outcome mean per set.
    pub fn fit(ds: &Dataset, options: FitOptions, sets: &[MeanSet]) -> Result<Self> {
        let propensity = fit_propensity(ds, options.link, options.clip)?;
        let mediators = fit_mediators(ds, options.mediator)?;
        let mut b = NuisanceBundle {
            propensity: Box::new(propensity),
            mediators,
            means: BTreeMap::new(),
            options,
            drop_conf_in_means: false,
        };
        for s in sets {
            b.ensure_mean(ds, s)?;
        }
        Ok(b)
    }

    /// Fits `μ(x_S)` unless already present.
    pub fn ensure_mean(&mut self, ds: &Dataset, set: &MeanSet) -> Result<()> {
        if !self.means.contains_key(set) {
            let mut eff = set.clone();
            if self.drop_conf_in_means {
                eff.conf = false;
            }
            let mut fit = fit_mean(ds, &eff)?;
            fit.set = set.clone();
            self.means.insert(set.clone(), Box::new(fit));
        }
        Ok(())
    }

    pub fn mean(&self, set: &MeanSet) -> Result<&dyn OutcomeMean> {
        self.means
            .get(set)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::Validation(format!("outcome mean for {set:?} was not fitted")))
    }

    pub fn insert_mean(&mut self, mean: Box<dyn OutcomeMean>) {
        self.means.insert(mean.set().clone(), mean);
    }
}

fn fit_mediators(ds: &Dataset, mode: MediatorMode) -> Result<Box<dyn MediatorLaw>> {
    let binary = ds.m_raw().iter().all(|&v| v == 0.0 || v == 1.0);
    Ok(match mode {
        MediatorMode::Gaussian => Box::new(fit_mediator_law(ds)?),
        MediatorMode::Bernoulli(link) => Box::new(fit_bernoulli_mediator_law(ds, link)?),
        MediatorMode::Auto if binary => Box::new(fit_bernoulli_mediator_law(ds, Link::Logit)?),
        MediatorMode::Auto => Box::new(fit_mediator_law(ds)?),
    })
}

/// Replaces the named components of `bundle` by deliberately wrong fits on `ds`.
/// Components not named are left as they are.
pub fn make_misspecified(
    mut bundle: NuisanceBundle,
    ds: &Dataset,
    scenarios: &[Misspecification],
) -> Result<NuisanceBundle> {
    for s in scenarios {
        match *s {
            Misspecification::WrongLink => {
                let link = bundle.options.link.other();
                bundle.propensity = Box::new(fit_propensity(ds, link, bundle.options.clip)?);
                bundle.options.link = link;
            }
            Misspecification::WrongOutcome => {
                bundle.drop_conf_in_means = true;
                let sets: Vec<MeanSet> = bundle.means.keys().cloned().collect();
                bundle.means.clear();
                for set in &sets {
                    bundle.ensure_mean(ds, set)?;
                }
            }
            Misspecification::WrongMediatorJ(j) | Misspecification::WrongMediatorShift(j) => {
                if j >= ds.p() {
                    return Err(Error::Dimension(format!("mediator {j} out of range")));
                }
                if bundle.mediators.is_discrete() {
                    return Err(Error::Validation("mediator misspecification needs a Gaussian law".into()));
                }
                let mut law = if matches!(s, Misspecification::WrongMediatorJ(_)) {
                    fit_mediator_law_dropping(ds, &[j])?
                } else {
                    fit_mediator_law(ds)?
                };
                if matches!(s, Misspecification::WrongMediatorShift(_)) {
                    law.intercept[j] += libm::sqrt(law.noise.cov[(j, j)]);
                }
                bundle.mediators = Box::new(law);
            }
        }
    }
    Ok(bundle)
}
