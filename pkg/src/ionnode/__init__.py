"""Ten-ion trapped-ion quantum network node: motion, photon source, shuttling,
qubit phases and ion-photon tomography."""

from .errors import IonNodeError

__version__ = "0.1.0"
__all__ = ["IonNodeError", "__version__"]
