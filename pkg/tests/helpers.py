from biot import contract as C
from biot.contract import DeviceId
from biot.ledger import Ledger


class Chain:
    """A deployed ledger with an admin, two gateways, a client and two devices."""

    def __init__(self):
        self.ledger = Ledger()
        self.admin = self.ledger.create_account("admin")
        self.g1 = self.ledger.create_account("g1")
        self.g2 = self.ledger.create_account("g2")
        self.client = self.ledger.create_account("client")
        self.d1 = DeviceId.from_label("d1")
        self.d2 = DeviceId.from_label("d2")

    def submit(self, sender, call, now=None):
        now = self.ledger.head.timestamp if now is None else now
        return self.ledger.submit_call(sender, call, now)

    def mine(self):
        return self.ledger.run_until_settled()

    def setup(self):
        self.submit(self.admin, C.call_deploy())
        self.submit(self.admin, C.call_register_gateway(self.g1))
        self.submit(self.admin, C.call_register_gateway(self.g2))
        self.submit(self.admin, C.call_register_device(self.d1, self.g1))
        self.submit(self.admin, C.call_register_device(self.d2, self.g2))
        self.mine()
        return self
