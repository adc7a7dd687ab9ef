//! Frequency filters applied to a dataset before it is split.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::split::StrategyTag;

/// One filtering pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterPass {
    /// Drop items with fewer than `min_item_purchases` interactions.
    Items,
    /// Drop users with fewer than `min_user_items` interactions or fewer
    /// than `min_user_baskets` baskets.
    Users,
}

/// Named pass orders accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterOrder {
    ItemsFirst,
    UsersFirst,
}

impl FilterOrder {
    pub fn passes(self) -> Vec<FilterPass> {
        match self {
            FilterOrder::ItemsFirst => vec![FilterPass::Items, FilterPass::Users],
            FilterOrder::UsersFirst => vec![FilterPass::Users, FilterPass::Items],
        }
    }
}

impl FromStr for FilterOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "items-first" | "items" => Ok(FilterOrder::ItemsFirst),
            "users-first" | "users" => Ok(FilterOrder::UsersFirst),
            other => Err(Error::invalid(
                "filter order",
                format!("{other:?} (expected items-first or users-first)"),
            )),
        }
    }
}

/// User/item frequency thresholds. A threshold of 0 disables its check;
/// every comparison is strict "fewer than".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    #[serde(default)]
    pub min_item_purchases: usize,
    #[serde(default)]
    pub min_user_items: usize,
    #[serde(default)]
    pub min_user_baskets: usize,
    pub order: Vec<FilterPass>,
    #[serde(default)]
    pub iterate_to_fixpoint: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let order: Vec<&str> = self
            .order
            .iter()
            .map(|p| match p {
                FilterPass::Items => "items",
                FilterPass::Users => "users",
            })
            .collect();
        write!(
            f,
            "items>={} users>={}items,{}baskets order={} fixpoint={}",
            self.min_item_purchases,
            self.min_user_items,
            self.min_user_baskets,
            order.join(","),
            self.iterate_to_fixpoint
        )
    }
}

impl FilterSpec {
    pub fn identity() -> Self {
        Self {
            min_item_purchases: 0,
            min_user_items: 0,
            min_user_baskets: 0,
            order: vec![FilterPass::Items],
            iterate_to_fixpoint: false,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.min_item_purchases == 0 && self.min_user_items == 0 && self.min_user_baskets == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.order.is_empty() {
            return Err(Error::invalid("filter order", "must list at least one pass"));
        }
        Ok(())
    }
}

/// The filter used for a strategy when none is configured.
///
/// Leave-one-last variants drop items bought fewer than 10 times; the
/// temporal-global split first drops users with fewer than 30 purchases or
/// fewer than 10 baskets and then items bought fewer than 20 times. The
/// remaining strategies reuse the leave-one-last filter.
pub fn builtin_spec(strategy: StrategyTag) -> FilterSpec {
    match strategy {
        StrategyTag::TemporalGlobal => FilterSpec {
            min_item_purchases: 20,
            min_user_items: 30,
            min_user_baskets: 10,
            order: vec![FilterPass::Users, FilterPass::Items],
            iterate_to_fixpoint: false,
        },
        StrategyTag::LeaveOneLastItem
        | StrategyTag::LeaveOneLastBasket
        | StrategyTag::TemporalUser
        | StrategyTag::RandomLeaveOne
        | StrategyTag::RandomRatio
        | StrategyTag::UserSplit => FilterSpec {
            min_item_purchases: 10,
            min_user_items: 0,
            min_user_baskets: 0,
            order: vec![FilterPass::Items],
            iterate_to_fixpoint: false,
        },
    }
}

fn run_pass(ds: &Dataset, pass: FilterPass, spec: &FilterSpec) -> Dataset {
    match pass {
        FilterPass::Items => {
            if spec.min_item_purchases == 0 {
                return ds.clone();
            }
            let mut counts = vec![0usize; ds.n_items()];
            for x in ds.interactions() {
                counts[x.item as usize] += 1;
            }
            ds.retain(|x| counts[x.item as usize] >= spec.min_item_purchases)
        }
        FilterPass::Users => {
            if spec.min_user_items == 0 && spec.min_user_baskets == 0 {
                return ds.clone();
            }
            let keep: Vec<bool> = (0..ds.n_users() as u32)
                .map(|u| {
                    let n = ds.chronologies()[u as usize].len();
                    let baskets = if spec.min_user_baskets > 0 {
                        ds.user_baskets(u).len()
                    } else {
                        usize::MAX
                    };
                    n >= spec.min_user_items && baskets >= spec.min_user_baskets
                })
                .collect();
            ds.retain(|x| keep[x.user as usize])
        }
    }
}

/// Applies `spec` and returns the surviving dataset with compacted id maps.
pub fn apply_filter(dataset: &Dataset, spec: &FilterSpec) -> Result<Dataset> {
    spec.validate()?;
    if spec.is_identity() {
        return Ok(dataset.clone());
    }
    let mut current = dataset.clone();
    loop {
        let before = current.len();
        for &pass in &spec.order {
            current = run_pass(&current, pass, spec);
        }
        if current.is_empty() {
            return Err(Error::EmptyFilterResult);
        }
        if !spec.iterate_to_fixpoint || current.len() == before {
            return Ok(current);
        }
    }
}
