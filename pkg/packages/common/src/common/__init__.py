from .models import Box as Box
from .models import ControlDocument as ControlDocument
from .models import LibraryDocument as LibraryDocument
from .models import MonomialCoefficient as MonomialCoefficient
from .models import OutputBox as OutputBox
from .models import PlantSignature as PlantSignature
from .models import RecordDocument as RecordDocument
from .models import SampleDocument as SampleDocument
from .models import SurfaceDocument as SurfaceDocument
