from .panorama import *
