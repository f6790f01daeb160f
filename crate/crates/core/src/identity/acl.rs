use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::Role;

/// A name pattern: an exact name, or a prefix followed by a single trailing `*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern(String);

impl Pattern {
    pub fn new(p: impl Into<String>) -> Self {
        Pattern(p.into())
    }

    pub fn matches(&self, name: &str) -> bool {
        match self.0.strip_suffix('*') {
            Some(prefix) => name.starts_with(prefix),
            None => self.0 == name,
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Pattern {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Pattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        // Only a trailing wildcard is meaningful.
        if s.trim_end_matches('*').contains('*') || s.ends_with("**") {
            return Err(serde::de::Error::custom(format!("unsupported pattern {s}")));
        }
        Ok(Pattern(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclRule {
    pub role: Role,
    pub contract_id: Pattern,
    pub operation: Pattern,
    pub effect: Decision,
}

impl AclRule {
    pub fn new(role: Role, contract_id: &str, operation: &str, effect: Decision) -> Self {
        AclRule {
            role,
            contract_id: Pattern::new(contract_id),
            operation: Pattern::new(operation),
            effect,
        }
    }

    fn matches(&self, role: Role, contract_id: &str, operation: &str) -> bool {
        self.role == role && self.contract_id.matches(contract_id) && self.operation.matches(operation)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessControlList {
    pub rules: Vec<AclRule>,
}

impl AccessControlList {
    pub fn new(rules: Vec<AclRule>) -> Self {
        AccessControlList { rules }
    }

    /// Rules installed by the consortium's genesis block.
    pub fn consortium_default() -> Self {
        use Decision::Allow;
        use Role::*;
        AccessControlList::new(vec![
            AclRule::new(Admin, "*", "*", Allow),
            AclRule::new(QaOperator, "grain", "record_*", Allow),
            AclRule::new(QaOperator, "grain", "DiscountsTransaction", Allow),
            AclRule::new(QaOperator, "grain", "assign_silo", Allow),
            AclRule::new(WarehouseOperator, "grain", "record_weigh_in", Allow),
            AclRule::new(WarehouseOperator, "grain", "register_silo", Allow),
            AclRule::new(WarehouseOperator, "grain", "assign_silo", Allow),
            AclRule::new(WarehouseOperator, "grain", "create_outgoing_lot", Allow),
            AclRule::new(Trader, "grain", "create_outgoing_lot", Allow),
        ])
    }

    pub fn check(&self, role: Role, contract_id: &str, operation: &str) -> Decision {
        check_acl(self, role, contract_id, operation)
    }
}

/// First matching rule wins; no match denies.
pub fn check_acl(acl: &AccessControlList, role: Role, contract_id: &str, operation: &str) -> Decision {
    acl.rules
        .iter()
        .find(|r| r.matches(role, contract_id, operation))
        .map_or(Decision::Deny, |r| r.effect)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_acl_denies() {
        let acl = AccessControlList::default();
        for role in Role::ALL {
            assert_eq!(check_acl(&acl, *role, "grain", "record_extrinsic"), Decision::Deny);
        }
    }

    #[test]
    fn trailing_wildcard_table() {
        let acl = AccessControlList::new(vec![AclRule::new(
            Role::QaOperator,
            "grain",
            "record_*",
            Decision::Allow,
        )]);
        let cases = [
            (Role::QaOperator, "grain", "record_extrinsic", Decision::Allow),
            (Role::QaOperator, "grain", "record_", Decision::Allow),
            (Role::QaOperator, "grain", "record", Decision::Deny),
            (Role::QaOperator, "grain", "xrecord_extrinsic", Decision::Deny),
            (Role::QaOperator, "grains", "record_extrinsic", Decision::Deny),
            (Role::Producer, "grain", "record_extrinsic", Decision::Deny),
        ];
        for (role, c, op, want) in cases {
            assert_eq!(check_acl(&acl, role, c, op), want, "{role} {c} {op}");
        }
    }

    #[test]
    fn first_match_wins() {
        let acl = AccessControlList::new(vec![
            AclRule::new(Role::Trader, "grain", "create_*", Decision::Deny),
            AclRule::new(Role::Trader, "grain", "create_outgoing_lot", Decision::Allow),
        ]);
        assert_eq!(check_acl(&acl, Role::Trader, "grain", "create_outgoing_lot"), Decision::Deny);
    }

    #[test]
    fn inner_wildcards_rejected() {
        let bad: Result<Pattern, _> = serde_json::from_str("\"rec*rd\"");
        assert!(bad.is_err());
        let ok: Pattern = serde_json::from_str("\"record_*\"").unwrap();
        assert!(ok.matches("record_weigh_in"));
    }

    #[test]
    fn producers_cannot_deploy() {
        let acl = AccessControlList::consortium_default();
        assert_eq!(acl.check(Role::Producer, "lifecycle", "deploy"), Decision::Deny);
        assert_eq!(acl.check(Role::Admin, "lifecycle", "deploy"), Decision::Allow);
        assert_eq!(acl.check(Role::QaOperator, "grain", "record_intrinsic"), Decision::Allow);
    }

    fn arb_rule() -> impl Strategy<Value = AclRule> {
        (
            prop::sample::select(Role::ALL.to_vec()),
            prop::sample::select(vec!["grain", "gr*", "*", "lifecycle"]),
            prop::sample::select(vec!["record_*", "assign_silo", "*", "deploy"]),
            any::<bool>(),
        )
            .prop_map(|(role, c, op, allow)| {
                AclRule::new(role, c, op, if allow { Decision::Allow } else { Decision::Deny })
            })
    }

    proptest! {
        // The decision equals a linear scan for the first matching rule.
        #[test]
        fn decision_is_first_match(rules in prop::collection::vec(arb_rule(), 0..8),
                                   role in prop::sample::select(Role::ALL.to_vec()),
                                   contract in prop::sample::select(vec!["grain", "lifecycle", "governance"]),
                                   op in prop::sample::select(vec!["record_weigh_in", "assign_silo", "deploy", "x"])) {
            let acl = AccessControlList::new(rules.clone());
            let mut expected = Decision::Deny;
            for r in &rules {
                let c_ok = r.contract_id.as_str() == "*" || r.contract_id.as_str() == contract
                    || (r.contract_id.as_str().ends_with('*') && contract.starts_with(r.contract_id.as_str().trim_end_matches('*')));
                let o_ok = r.operation.as_str() == "*" || r.operation.as_str() == op
                    || (r.operation.as_str().ends_with('*') && op.starts_with(r.operation.as_str().trim_end_matches('*')));
                if r.role == role && c_ok && o_ok {
                    expected = r.effect;
                    break;
                }
            }
            prop_assert_eq!(check_acl(&acl, role, contract, op), expected);
        }
    }
}
