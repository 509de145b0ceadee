# Import models so the run tables register on Base
from . import models
