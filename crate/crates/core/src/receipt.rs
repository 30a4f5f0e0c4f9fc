//! Signed confirmations and the aggregated multi-signature receipt.
//!
//! A peer cell answers a forwarded transaction with a `Confirmation`: its
//! post-execution contract fingerprint wrapped in a TX_CONFIRM envelope it
//! signed. The service cell serializes all confirmations (its own included)
//! into a `Receipt` — the client's offline-verifiable proof of the outcome.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::error::ProtocolError;
use crate::protocol::{
    sign_envelope, verify_envelope, Address, Digest, Envelope, KeyPair, Nonce, Opcode, Payload,
};

/// How one cell saw a transaction execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfirmOutcome {
    Applied,
    Rejected,
}

impl ConfirmOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConfirmOutcome::Applied => "applied",
            ConfirmOutcome::Rejected => "rejected",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ProtocolError> {
        match s {
            "applied" => Ok(ConfirmOutcome::Applied),
            "rejected" => Ok(ConfirmOutcome::Rejected),
            other => Err(ProtocolError::Decode(format!(
                "unknown confirmation outcome {other}"
            ))),
        }
    }
}

/// One cell's signed execution confirmation.
#[derive(Debug, Clone, PartialEq)]
pub struct Confirmation {
    pub cell: Address,
    pub tx_sender: Address,
    pub tx_nonce: Nonce,
    pub outcome: ConfirmOutcome,
    pub fingerprint: Digest,
    pub error: Option<String>,
    pub envelope: Envelope,
}

impl Confirmation {
    pub fn build(
        key: &KeyPair,
        recipient: Address,
        tx_sender: Address,
        tx_nonce: Nonce,
        outcome: ConfirmOutcome,
        fingerprint: Digest,
        error: Option<String>,
        timestamp: u64,
    ) -> Result<Self, ProtocolError> {
        let mut data = BTreeMap::new();
        data.insert("tx_sender".to_string(), json!(tx_sender.to_string()));
        data.insert("tx_nonce".to_string(), json!(tx_nonce.to_string()));
        data.insert("outcome".to_string(), json!(outcome.as_str()));
        data.insert("fingerprint".to_string(), json!(fingerprint.to_string()));
        if let Some(err) = &error {
            data.insert("error".to_string(), json!(err));
        }
        let payload = Payload::new(key.address(), recipient, Opcode::TxConfirm, timestamp, data)
            .with_reply_to(tx_nonce);
        let envelope = sign_envelope(payload, key)?;
        Ok(Self {
            cell: key.address(),
            tx_sender,
            tx_nonce,
            outcome,
            fingerprint,
            error,
            envelope,
        })
    }

    /// Parses and signature-verifies a confirmation envelope.
    pub fn from_envelope(envelope: Envelope) -> Result<Self, ProtocolError> {
        let cell = verify_envelope(&envelope)?;
        let data = &envelope.payload.data;
        let field = |key: &str| -> Result<&str, ProtocolError> {
            data.get(key)
                .and_then(Value::as_str)
                .ok_or_else(|| ProtocolError::Decode(format!("confirmation missing '{key}'")))
        };
        let tx_sender: Address = field("tx_sender")?.parse()?;
        let tx_nonce: Nonce = field("tx_nonce")?.parse()?;
        let outcome = ConfirmOutcome::parse(field("outcome")?)?;
        let fingerprint: Digest = field("fingerprint")?.parse()?;
        let error = data
            .get("error")
            .and_then(Value::as_str)
            .map(str::to_string);
        Ok(Self {
            cell,
            tx_sender,
            tx_nonce,
            outcome,
            fingerprint,
            error,
            envelope,
        })
    }
}

/// Client-visible disposition of a committed transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiptOutcome {
    Accepted,
    Rejected,
    Reverted,
}

impl ReceiptOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReceiptOutcome::Accepted => "accepted",
            ReceiptOutcome::Rejected => "rejected",
            ReceiptOutcome::Reverted => "reverted",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ProtocolError> {
        match s {
            "accepted" => Ok(ReceiptOutcome::Accepted),
            "rejected" => Ok(ReceiptOutcome::Rejected),
            "reverted" => Ok(ReceiptOutcome::Reverted),
            other => Err(ProtocolError::Decode(format!(
                "unknown receipt outcome {other}"
            ))),
        }
    }
}

/// Aggregated multi-signature transaction confirmation.
#[derive(Debug, Clone)]
pub struct Receipt {
    pub service_cell: Address,
    pub tx_sender: Address,
    pub tx_nonce: Nonce,
    pub outcome: ReceiptOutcome,
    pub reason: Option<String>,
    pub fingerprint: Option<Digest>,
    pub result: BTreeMap<String, Value>,
    pub confirmations: Vec<Confirmation>,
    pub envelope: Envelope,
}

impl Receipt {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        key: &KeyPair,
        client: Address,
        tx_sender: Address,
        tx_nonce: Nonce,
        outcome: ReceiptOutcome,
        reason: Option<String>,
        fingerprint: Option<Digest>,
        result: BTreeMap<String, Value>,
        confirmations: Vec<Confirmation>,
        timestamp: u64,
    ) -> Result<Self, ProtocolError> {
        let mut data = BTreeMap::new();
        data.insert("tx_sender".to_string(), json!(tx_sender.to_string()));
        data.insert("tx_nonce".to_string(), json!(tx_nonce.to_string()));
        data.insert("outcome".to_string(), json!(outcome.as_str()));
        if let Some(reason) = &reason {
            data.insert("reason".to_string(), json!(reason));
        }
        if let Some(fp) = &fingerprint {
            data.insert("fingerprint".to_string(), json!(fp.to_string()));
        }
        if !result.is_empty() {
            data.insert("result".to_string(), json!(result));
        }
        let encoded: Vec<String> = confirmations
            .iter()
            .map(|c| c.envelope.encode())
            .collect::<Result<_, _>>()?;
        data.insert("confirmations".to_string(), json!(encoded));
        let payload = Payload::new(key.address(), client, Opcode::TxConfirm, timestamp, data)
            .with_reply_to(tx_nonce);
        let envelope = sign_envelope(payload, key)?;
        Ok(Self {
            service_cell: key.address(),
            tx_sender,
            tx_nonce,
            outcome,
            reason,
            fingerprint,
            result,
            confirmations,
            envelope,
        })
    }

    /// Parses and signature-verifies a receipt envelope and every
    /// confirmation inside it.
    pub fn from_envelope(envelope: Envelope) -> Result<Self, ProtocolError> {
        let service_cell = verify_envelope(&envelope)?;
        let data = &envelope.payload.data;
        let field = |key: &str| -> Result<&str, ProtocolError> {
            data.get(key)
                .and_then(Value::as_str)
                .ok_or_else(|| ProtocolError::Decode(format!("receipt missing '{key}'")))
        };
        let tx_sender: Address = field("tx_sender")?.parse()?;
        let tx_nonce: Nonce = field("tx_nonce")?.parse()?;
        let outcome = ReceiptOutcome::parse(field("outcome")?)?;
        let reason = data
            .get("reason")
            .and_then(Value::as_str)
            .map(str::to_string);
        let fingerprint = match data.get("fingerprint").and_then(Value::as_str) {
            Some(s) => Some(s.parse()?),
            None => None,
        };
        let result = data
            .get("result")
            .and_then(Value::as_object)
            .map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
            .unwrap_or_default();
        let mut confirmations = Vec::new();
        if let Some(list) = data.get("confirmations").and_then(Value::as_array) {
            for item in list {
                let raw = item.as_str().ok_or_else(|| {
                    ProtocolError::Decode("confirmation entry is not a string".into())
                })?;
                confirmations.push(Confirmation::from_envelope(Envelope::decode(raw)?)?);
            }
        }
        Ok(Self {
            service_cell,
            tx_sender,
            tx_nonce,
            outcome,
            reason,
            fingerprint,
            result,
            confirmations,
            envelope,
        })
    }

    /// Full offline validity check against the deployment's consortium set:
    /// signatures, membership, nonce binding, fingerprint agreement, and the
    /// service cell's own confirmation.
    pub fn verify_offline(&self, consortium: &[Address]) -> Result<(), String> {
        if !consortium.contains(&self.service_cell) {
            return Err(format!("service cell {} not in consortium", self.service_cell));
        }
        verify_envelope(&self.envelope).map_err(|e| format!("receipt signature: {e}"))?;
        for confirmation in &self.confirmations {
            verify_envelope(&confirmation.envelope)
                .map_err(|e| format!("confirmation signature: {e}"))?;
            if !consortium.contains(&confirmation.cell) {
                return Err(format!("confirming cell {} not in consortium", confirmation.cell));
            }
            if confirmation.tx_nonce != self.tx_nonce || confirmation.tx_sender != self.tx_sender {
                return Err("confirmation bound to a different transaction".into());
            }
        }
        if self.outcome == ReceiptOutcome::Accepted {
            let fp = self
                .fingerprint
                .ok_or_else(|| "accepted receipt missing fingerprint".to_string())?;
            if self.confirmations.is_empty() {
                return Err("accepted receipt carries no confirmations".into());
            }
            if !self
                .confirmations
                .iter()
                .any(|c| c.cell == self.service_cell)
            {
                return Err("service cell's own confirmation missing".into());
            }
            for confirmation in &self.confirmations {
                if confirmation.outcome != ConfirmOutcome::Applied {
                    return Err(format!(
                        "cell {} confirmed outcome {}, receipt says accepted",
                        confirmation.cell,
                        confirmation.outcome.as_str()
                    ));
                }
                if confirmation.fingerprint != fp {
                    return Err(format!(
                        "cell {} fingerprint {} disagrees with receipt {fp}",
                        confirmation.cell, confirmation.fingerprint
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::fingerprint_bytes;

    fn key(tag: u8) -> KeyPair {
        KeyPair::from_secret_bytes(&[tag; 32]).unwrap()
    }

    fn build_receipt(outcome: ReceiptOutcome, tamper_fp: bool) -> (Receipt, Vec<Address>) {
        let service = key(1);
        let peer = key(2);
        let client = key(3);
        let consortium = vec![service.address(), peer.address()];
        let tx_nonce = Nonce::from_bytes([9; 16]);
        let fp = fingerprint_bytes(b"post state");
        let peer_fp = if tamper_fp { fingerprint_bytes(b"lie") } else { fp };

        let own = Confirmation::build(
            &service,
            service.address(),
            client.address(),
            tx_nonce,
            ConfirmOutcome::Applied,
            fp,
            None,
            10,
        )
        .unwrap();
        let theirs = Confirmation::build(
            &peer,
            service.address(),
            client.address(),
            tx_nonce,
            ConfirmOutcome::Applied,
            peer_fp,
            None,
            10,
        )
        .unwrap();
        let receipt = Receipt::build(
            &service,
            client.address(),
            client.address(),
            tx_nonce,
            outcome,
            None,
            Some(fp),
            BTreeMap::new(),
            vec![own, theirs],
            11,
        )
        .unwrap();
        (receipt, consortium)
    }

    #[test]
    fn accepted_receipt_round_trip_verifies() {
        let (receipt, consortium) = build_receipt(ReceiptOutcome::Accepted, false);
        let wire = receipt.envelope.encode().unwrap();
        let parsed = Receipt::from_envelope(Envelope::decode(&wire).unwrap()).unwrap();
        assert_eq!(parsed.outcome, ReceiptOutcome::Accepted);
        assert_eq!(parsed.confirmations.len(), 2);
        parsed.verify_offline(&consortium).unwrap();
    }

    #[test]
    fn fingerprint_disagreement_fails_offline_check() {
        let (receipt, consortium) = build_receipt(ReceiptOutcome::Accepted, true);
        assert!(receipt.verify_offline(&consortium).is_err());
    }

    #[test]
    fn foreign_confirmation_rejected() {
        let (receipt, _) = build_receipt(ReceiptOutcome::Accepted, false);
        let wrong_consortium = vec![key(7).address(), key(8).address()];
        assert!(receipt.verify_offline(&wrong_consortium).is_err());
    }

    #[test]
    fn confirmation_parse_rejects_bad_signature() {
        let service = key(1);
        let confirmation = Confirmation::build(
            &service,
            service.address(),
            key(3).address(),
            Nonce::from_bytes([9; 16]),
            ConfirmOutcome::Applied,
            fingerprint_bytes(b"x"),
            None,
            10,
        )
        .unwrap();
        let mut envelope = confirmation.envelope.clone();
        envelope.payload.timestamp += 1;
        assert!(Confirmation::from_envelope(envelope).is_err());
    }
}
