"""Exception hierarchy.

Every error carries a short ``code`` so scenario files and HTTP bodies can
refer to a failure without depending on class names.
"""


class SSIError(Exception):
    code = "error"


# crypto ---------------------------------------------------------------------

class CryptoError(SSIError):
    code = "crypto"


class MalformedSeedError(CryptoError):
    code = "malformed_seed"


class MalformedKeyError(CryptoError):
    code = "malformed_key"


class CanonicalizationError(CryptoError):
    code = "canonicalization"


# identity ledger --------------------------------------------------------------

class LedgerError(SSIError):
    code = "ledger"


class ObserverWriteError(LedgerError):
    code = "observer_write"


class UnknownSubmitterError(LedgerError):
    code = "unknown_submitter"


class EndorsementError(LedgerError):
    code = "missing_endorsement"


class BadSignatureError(LedgerError):
    code = "bad_signature"


class InvalidPayloadError(LedgerError):
    code = "invalid_payload"


class OutOfRangeError(LedgerError):
    code = "out_of_range"


class DIDNotFoundError(LedgerError):
    code = "did_not_found"


class UnknownRegistryError(LedgerError):
    code = "unknown_registry"


class UnknownSchemaError(LedgerError):
    code = "unknown_schema"


class LedgerCorruptError(LedgerError):
    code = "ledger_corrupt"

    def __init__(self, message: str, seq_no: int | None = None):
        super().__init__(message)
        self.seq_no = seq_no


class AuthorizationError(SSIError):
    """Caller is not allowed to perform the operation."""

    code = "unauthorized"


# DID core ---------------------------------------------------------------------

class DocumentError(SSIError):
    code = "invalid_document"


class DIDAuthError(SSIError):
    code = "did_auth"


class ResolutionError(DIDAuthError):
    code = "resolution_failure"


class BadProofError(DIDAuthError):
    code = "bad_proof"


class ExpiredChallengeError(DIDAuthError):
    code = "expired_challenge"


class NonceReusedError(DIDAuthError):
    code = "reused_nonce"


class UnknownChallengeError(DIDAuthError):
    code = "unknown_challenge"


class MessageError(DIDAuthError):
    code = "bad_message"


class TransportError(SSIError):
    code = "transport"


# credentials ------------------------------------------------------------------

class CredentialError(SSIError):
    code = "credential"


class ClaimMismatchError(CredentialError):
    code = "claim_mismatch"


class UnknownClaimError(CredentialError):
    code = "unknown_claim"


class NoSuchCredentialError(CredentialError):
    code = "no_such_credential"


class UnknownIndexError(CredentialError):
    code = "unknown_index"


# wallet -------------------------------------------------------------------------

class WalletError(SSIError):
    code = "wallet"


class ForeignHolderError(WalletError):
    code = "foreign_holder"


class WalletAuthError(WalletError):
    code = "wallet_auth"


class CorruptPayloadError(WalletError):
    code = "corrupt_payload"


# authorization runtime --------------------------------------------------------------

class RuntimeContractError(SSIError):
    code = "contract"


class MalformedPolicyError(RuntimeContractError):
    code = "malformed_policy"


class ContractNotFoundError(RuntimeContractError):
    code = "unknown_contract"


class UnauthorizedCallerError(RuntimeContractError):
    code = "unauthorized_caller"


class UnregisteredOwnerError(RuntimeContractError):
    code = "unregistered_owner"


# bridge ---------------------------------------------------------------------------------

class BridgeError(SSIError):
    code = "bridge"


class LedgerReadError(BridgeError):
    code = "ledger_read"


class ViewUnavailableError(BridgeError):
    code = "view_unavailable"


class BindError(BridgeError):
    code = "bind_failure"


# vehicle ----------------------------------------------------------------------------------

class VehicleError(SSIError):
    code = "vehicle"


class ConcurrentSessionError(VehicleError):
    code = "concurrent_session"


class NonceMismatchError(VehicleError):
    code = "nonce_mismatch"


class NoSessionError(VehicleError):
    code = "no_session"


class ContractUnreachableError(VehicleError):
    code = "contract_unreachable"
