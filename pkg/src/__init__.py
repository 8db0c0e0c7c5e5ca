# DeepLccLab - Mischverkehrs-Simulator und DeeP-LCC Regler
__version__ = "0.1.0"
