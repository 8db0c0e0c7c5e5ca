# Core Module - Fahrzeugmodelle, Datenbasierte Darstellung, Regler, Simulator
