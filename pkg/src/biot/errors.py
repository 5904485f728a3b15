"""Exception hierarchy shared by every module.

Contract-level errors carry a stable ``code`` so a reverted transaction can
persist the reason in the ledger file.
"""


class BIoTError(Exception):
    code = "Error"


# ledger
class LedgerError(BIoTError):
    code = "LedgerError"


class UnknownSender(LedgerError):
    code = "UnknownSender"


class ClockRegression(LedgerError):
    code = "ClockRegression"


class NotReadOnly(LedgerError):
    code = "NotReadOnly"


class LedgerCorrupt(LedgerError):
    code = "LedgerCorrupt"


# contract (raised during execution, turned into a Reverted status)
class ContractError(BIoTError):
    code = "ContractError"


class Unauthorized(ContractError):
    code = "Unauthorized"


class UnknownGateway(ContractError):
    code = "UnknownGateway"


class UnknownDevice(ContractError):
    code = "UnknownDevice"


class PayloadTooLarge(ContractError):
    code = "PayloadTooLarge"


class NotDeployed(ContractError):
    code = "NotDeployed"


class AlreadyDeployed(ContractError):
    code = "AlreadyDeployed"


class BadArguments(ContractError):
    code = "BadArguments"


class UnknownFunction(ContractError):
    code = "UnknownFunction"


# anchoring
class AnchoringError(BIoTError):
    code = "AnchoringError"


class StoreUnavailable(AnchoringError):
    code = "StoreUnavailable"


class EmptyWindow(AnchoringError):
    code = "EmptyWindow"


class IndexOutOfRange(AnchoringError):
    code = "IndexOutOfRange"


class MalformedProof(AnchoringError):
    code = "MalformedProof"


# gateway / devices
class GatewayError(BIoTError):
    code = "GatewayError"


class PinningMismatch(GatewayError):
    code = "PinningMismatch"


class UnknownDeviceFingerprint(GatewayError):
    code = "UnknownDeviceFingerprint"


class ChannelClosed(GatewayError):
    code = "ChannelClosed"


class DeviceTimeout(GatewayError):
    code = "DeviceTimeout"

    def __init__(self, message: str = "", at: float | None = None):
        super().__init__(message)
        self.at = at


class MalformedFrame(BIoTError):
    code = "MalformedFrame"


# economics / harness
class IncompleteRun(BIoTError):
    code = "IncompleteRun"


class ConfigInvalid(BIoTError):
    code = "ConfigInvalid"
